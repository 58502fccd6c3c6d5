use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::pipeline::PrototypeSet;
use crate::retrieve::{read_embeddings, EmbeddingRow};
use crate::{Error, Result};

/// `kind` value of the rows that mark class prototypes.
pub const PROTOTYPE_KIND: &str = "star";

/// Relative eigenvalue below which a direction counts as absent.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRow {
    pub id: String,
    pub class: String,
    pub kind: String,
    pub x: f64,
    pub y: f64,
}

/// Mean and top two principal directions fitted on a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// Unit component vectors, largest variance first. The entry of largest
    /// magnitude in each is positive.
    pub components: [Vec<f64>; 2],
    pub variances: [f64; 2],
}

impl Projection {
    pub fn fit(vectors: &[&[f64]]) -> Result<Self> {
        let n = vectors.len();
        if n < 3 {
            return Err(Error::Validation(format!("projection needs at least 3 vectors, got {n}")));
        }
        let d = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != d) {
            return Err(Error::Shape(format!("vector of dim {} among dim {d}", v.len())));
        }
        if d < 2 {
            return Err(Error::Rank("vectors have fewer than 2 dimensions".into()));
        }
        let mut mean = vec![0.0; d];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(*v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
        let cov = (centered.transpose() * &centered) / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]];
        let second = eig.eigenvalues[order[1]];
        if !(top > 0.0) || second <= RANK_TOL * top {
            return Err(Error::Rank(format!(
                "centered vectors span fewer than 2 directions (eigenvalues {top:e}, {second:e})"
            )));
        }
        let component = |k: usize| -> Vec<f64> {
            let mut c: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            let lead = c
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        };
        Ok(Projection {
            mean,
            components: [component(0), component(1)],
            variances: [top, second],
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<(f64, f64)> {
        if v.len() != self.mean.len() {
            return Err(Error::Shape(format!("vector of dim {}, projection has {}", v.len(), self.mean.len())));
        }
        let coord = |c: &[f64]| v.iter().zip(&self.mean).zip(c).map(|((x, m), w)| (x - m) * w).sum::<f64>();
        Ok((coord(&self.components[0]), coord(&self.components[1])))
    }
}

/// Projects embedding rows onto their top two principal components. Each
/// prototype is projected with the same fit and appended as a `star` row.
pub fn pca_project(rows: &[EmbeddingRow], prototypes: Option<&PrototypeSet>) -> Result<Vec<ProjectedRow>> {
    let vectors: Vec<&[f64]> = rows.iter().map(|r| r.vector.as_slice()).collect();
    let proj = Projection::fit(&vectors)?;
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let (x, y) = proj.apply(&r.vector)?;
        out.push(ProjectedRow {
            id: r.id.clone(),
            class: r.class.clone(),
            kind: r.kind.to_string(),
            x,
            y,
        });
    }
    if let Some(set) = prototypes {
        for p in &set.entries {
            let (x, y) = proj.apply(&p.vector)?;
            out.push(ProjectedRow {
                id: format!("prototype-{}", p.class_id),
                class: p.name.clone(),
                kind: PROTOTYPE_KIND.to_string(),
                x,
                y,
            });
        }
    }
    Ok(out)
}

/// CSV with header `id,class,kind,x,y`.
pub fn write_projection(rows: &[ProjectedRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["id", "class", "kind", "x", "y"]).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    crate::nn::write_atomic(path, &bytes)
}

/// Reads an embedding file, projects it and writes the coordinates.
pub fn project_file(embeddings: &Path, out: &Path, prototypes: Option<&PrototypeSet>) -> Result<Vec<ProjectedRow>> {
    let rows = read_embeddings(embeddings)?;
    let projected = pca_project(&rows, prototypes)?;
    write_projection(&projected, out)?;
    Ok(projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SampleKind;
    use rand::Rng;

    fn rows(vs: Vec<Vec<f64>>) -> Vec<EmbeddingRow> {
        vs.into_iter()
            .enumerate()
            .map(|(i, vector)| EmbeddingRow {
                id: format!("s{i}"),
                class: "A".into(),
                kind: SampleKind::Payload,
                vector,
            })
            .collect()
    }

    fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    }

    #[test]
    fn planar_points_keep_their_distances() {
        let mut r = crate::rng::seeded(4);
        let d = 128;
        // Orthonormal basis u, w of a random plane through an offset.
        let mut u: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let nu = crate::nn::l2_norm(&u);
        u.iter_mut().for_each(|x| *x /= nu);
        let mut w: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let p = crate::nn::dot(&u, &w);
        w.iter_mut().zip(&u).for_each(|(x, ui)| *x -= p * ui);
        let nw = crate::nn::l2_norm(&w);
        w.iter_mut().for_each(|x| *x /= nw);
        let offset: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let vs: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b) = (r.gen_range(-3.0..3.0), r.gen_range(-1.0..1.0));
                (0..d).map(|k| offset[k] + a * u[k] + b * w[k]).collect()
            })
            .collect();
        let out = pca_project(&rows(vs.clone()), None).unwrap();
        for i in 0..vs.len() {
            for j in 0..i {
                let orig: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let proj = dist((out[i].x, out[i].y), (out[j].x, out[j].y));
                assert!((orig - proj).abs() < 1e-8, "{orig} vs {proj}");
            }
        }
    }

    #[test]
    fn collinear_points_are_rank_deficient() {
        let vs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
        assert!(matches!(pca_project(&rows(vs), None), Err(Error::Rank(_))));
        assert!(pca_project(&rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), None).is_err());
    }

    #[test]
    fn first_axis_carries_more_variance_and_signs_are_fixed() {
        let mut r = crate::rng::seeded(9);
        let vs: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![r.gen_range(-5.0..5.0), r.gen_range(-2.0..2.0), r.gen_range(-0.5..0.5)])
            .collect();
        let out = pca_project(&rows(vs.clone()), None).unwrap();
        let var = |f: &dyn Fn(&ProjectedRow) -> f64| {
            let m = out.iter().map(f).sum::<f64>() / out.len() as f64;
            out.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>()
        };
        assert!(var(&|r| r.x) >= var(&|r| r.y));
        let fit = Projection::fit(&vs.iter().map(|v| v.as_slice()).collect::<Vec<_>>()).unwrap();
        for c in &fit.components {
            let lead = c.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(lead > 0.0);
        }
        // Negating every input flips nothing in the sign convention.
        let neg: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        let fit2 = Projection::fit(&neg.iter().map(|v| v.as_slice()).collect::<Vec<_>>()).unwrap();
        for k in 0..2 {
            for (a, b) in fit.components[k].iter().zip(&fit2.components[k]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn csv_has_the_expected_header() {
        let vs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_projection(&pca_project(&rows(vs), None).unwrap(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,class,kind,x,y\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
