use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Sample, SampleKind};
use crate::{rng, Error, Result};

/// Three description ids: anchor and positive share a class, the negative
/// does not.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

/// A payload joined to the description of its threat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignPair {
    pub description_id: String,
    pub payload_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrphanPayload {
    pub payload_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct PairReport {
    pub pairs: Vec<AlignPair>,
    pub orphans: Vec<OrphanPayload>,
}

/// Draws `count` triplets. The anchor class is chosen uniformly among classes
/// holding at least two descriptions, so large classes do not dominate; the
/// negative class is uniform over every other class with a description.
pub fn sample_triplets(corpus: &Corpus, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); corpus.classes().len()];
    for d in corpus.descriptions() {
        by_class[d.class_id.0 as usize - 1].push(d);
    }
    let populated: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
    let anchor_classes: Vec<usize> = populated
        .iter()
        .copied()
        .filter(|&c| by_class[c].len() >= 2)
        .collect();
    if anchor_classes.is_empty() {
        return Err(Error::Validation(
            "no class holds two descriptions; cannot form an anchor/positive pair".into(),
        ));
    }
    if populated.len() < 2 {
        return Err(Error::Validation(
            "descriptions cover a single class; no negative class exists".into(),
        ));
    }

    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ac = anchor_classes[rng.gen_range(0..anchor_classes.len())];
        let members = &by_class[ac];
        let a = rng.gen_range(0..members.len());
        let mut p = rng.gen_range(0..members.len() - 1);
        if p >= a {
            p += 1;
        }
        let anchor_pos = populated.iter().position(|&c| c == ac).expect("anchor class is populated");
        let mut nc_pos = rng.gen_range(0..populated.len() - 1);
        if nc_pos >= anchor_pos {
            nc_pos += 1;
        }
        let negatives = &by_class[populated[nc_pos]];
        let n = rng.gen_range(0..negatives.len());
        out.push(Triplet {
            anchor_id: members[a].id.clone(),
            positive_id: members[p].id.clone(),
            negative_id: negatives[n].id.clone(),
        });
    }
    Ok(out)
}

/// Joins every payload to the first description (in corpus order) sharing its
/// threat id. Payloads without such a description, or whose description is
/// labelled with another class, are reported as orphans.
pub fn build_pairs(corpus: &Corpus) -> PairReport {
    let mut by_threat: HashMap<&str, &Sample> = HashMap::new();
    for d in corpus.descriptions() {
        by_threat.entry(d.threat_id.as_str()).or_insert(d);
    }
    let mut report = PairReport::default();
    for p in corpus.samples().iter().filter(|s| s.kind == SampleKind::Payload) {
        match by_threat.get(p.threat_id.as_str()) {
            Some(d) if d.class_id == p.class_id => report.pairs.push(AlignPair {
                description_id: d.id.clone(),
                payload_id: p.id.clone(),
            }),
            Some(d) => report.orphans.push(OrphanPayload {
                payload_id: p.id.clone(),
                reason: format!(
                    "description {} has class {} but payload has class {}",
                    d.id, d.class_id, p.class_id
                ),
            }),
            None => report.orphans.push(OrphanPayload {
                payload_id: p.id.clone(),
                reason: format!("no description for threat {}", p.threat_id),
            }),
        }
    }
    report
}
