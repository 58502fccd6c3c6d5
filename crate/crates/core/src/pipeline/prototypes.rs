use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{class_key, ClassId, VulnClass};
use crate::featurize::FeaturizerConfig;
use crate::nn::{Checkpoint, Matrix};
use crate::{Error, Result};

/// Text-encoder embedding of one class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class_id: ClassId,
    pub name: String,
    pub label: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub entries: Vec<Prototype>,
    /// Where the label texts came from (default table or a label file).
    pub provenance: String,
}

fn encode_label(text: &Checkpoint, label: &str) -> Result<Vec<f64>> {
    if label.trim().is_empty() {
        return Err(Error::Validation("empty prototype label".into()));
    }
    if !matches!(text.featurizer, FeaturizerConfig::Text(_)) {
        return Err(Error::Config("prototypes need a checkpoint with a text featurizer".into()));
    }
    let features = text.featurizer.featurize(label.as_bytes())?;
    Ok(text.encoder.encode(std::slice::from_ref(&features))?.row(0).to_vec())
}

/// Encodes every class label with the text encoder. Classes sharing a label
/// get identical prototypes; each such group is reported as a warning.
pub fn build_prototypes(text: &Checkpoint, classes: &[VulnClass]) -> Result<(PrototypeSet, Vec<String>)> {
    let mut entries = Vec::with_capacity(classes.len());
    let mut seen: HashMap<&str, &str> = HashMap::new();
    let mut warnings = Vec::new();
    for class in classes {
        if class.generic_label.trim().is_empty() {
            return Err(Error::Validation(format!("class {} has no label", class.name)));
        }
        if let Some(other) = seen.insert(class.generic_label.as_str(), class.name.as_str()) {
            warnings.push(format!(
                "classes {other} and {} share a label; their prototypes are identical",
                class.name
            ));
        }
        entries.push(Prototype {
            class_id: class.id,
            name: class.name.clone(),
            label: class.generic_label.clone(),
            vector: encode_label(text, &class.generic_label)?,
        });
    }
    Ok((
        PrototypeSet {
            entries,
            provenance: "class table".into(),
        },
        warnings,
    ))
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ClassId) -> Option<&Prototype> {
        self.entries.iter().find(|p| p.class_id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&Prototype> {
        let key = class_key(name);
        self.entries.iter().find(|p| class_key(&p.name) == key)
    }

    /// Prototype vectors as rows, in entry order.
    pub fn matrix(&self) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = self.entries.iter().map(|p| p.vector.clone()).collect();
        Matrix::from_rows(&rows)
    }

    /// Appends a class known only by its label. The new id is one past the
    /// largest id present.
    pub fn add_class(&mut self, text: &Checkpoint, name: &str, label: &str) -> Result<ClassId> {
        if name.trim().is_empty() {
            return Err(Error::Validation("class name must not be empty".into()));
        }
        if self.by_name(name).is_some() {
            return Err(Error::Validation(format!("class {name} already has a prototype")));
        }
        let vector = encode_label(text, label)?;
        if let Some(first) = self.entries.first() {
            if first.vector.len() != vector.len() {
                return Err(Error::Shape(format!(
                    "label embeds into {} dims but existing prototypes have {}",
                    vector.len(),
                    first.vector.len()
                )));
            }
        }
        let id = ClassId(self.entries.iter().map(|p| p.class_id.0).max().unwrap_or(0) + 1);
        self.entries.push(Prototype {
            class_id: id,
            name: name.to_string(),
            label: label.to_string(),
            vector,
        });
        Ok(id)
    }

    pub fn remove_class(&mut self, name: &str) -> Result<Prototype> {
        let key = class_key(name);
        let pos = self
            .entries
            .iter()
            .position(|p| class_key(&p.name) == key)
            .ok_or_else(|| Error::Validation(format!("no prototype for class {name}")))?;
        Ok(self.entries.remove(pos))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        crate::nn::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let set: PrototypeSet = serde_json::from_slice(&bytes).map_err(|e| Error::json(&e, 0))?;
        let mut ids = std::collections::HashSet::new();
        for p in &set.entries {
            if !ids.insert(p.class_id) {
                return Err(Error::Validation(format!("duplicate prototype class id {}", p.class_id)));
            }
            let norm = crate::nn::l2_norm(&p.vector);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!("prototype {} has norm {norm}", p.name)));
            }
        }
        Ok(set)
    }
}
