//! Data model for vulnerability descriptions and HTTP payloads, plus the
//! split and sampling operations that feed both training stages.

mod io;
mod sampling;
mod split;

use std::collections::{HashMap, HashSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    load_corpus, read_manifest, save_jsonl, write_manifest, CorpusFormat, LoadOptions,
    LoadedCorpus, Rejection,
};
pub use sampling::{build_pairs, sample_triplets, AlignPair, OrphanPayload, PairReport, Triplet};
pub use split::{stratified_split, temporal_split, Split};

/// Default payload size bound in bytes.
pub const DEFAULT_MAX_PAYLOAD_BYTES: usize = 16 * 1024;

/// Dense 1-based class identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnClass {
    pub id: ClassId,
    pub name: String,
    /// Generic prototype text encoded at inference time.
    pub generic_label: String,
}

/// The fifteen operational vulnerability types with their generic prototype
/// labels.
pub const DEFAULT_CLASSES: [(&str, &str); 15] = [
    ("Backdoor", "A hidden entry point allowing unauthorized system access. Data breaches and loss of control."),
    ("Botnet", "A network of compromised computers controlled remotely. Large-scale cyber-attacks and unauthorized system exploitation."),
    ("CGI", "A flaw in web applications enabling unauthorized actions. Data theft, code execution, and service disruption."),
    ("Code-execution", "A security flaw allowing arbitrary code execution. Unauthorized system control and potential data breaches."),
    ("Dir-traversal", "A security issue enabling attackers to retrieve sensitive files. Unauthorized file access and system compromise."),
    ("DoS", "An attack aimed at rendering a system unusable. Network disruption and resource exhaustion."),
    ("Info-Disclosure", "A weakness that allows unauthorized access to internal data. May lead to identity theft or system mapping."),
    ("Injection", "A vulnerability that lets attackers inject malicious code. Unauthorized database manipulation and system compromise."),
    ("Overflow", "A memory-related flaw causing crashes or unauthorized access. Unexpected execution paths and system instability."),
    ("Remote-File-Inclusion", "A vulnerability permitting attackers to include external malicious files. Unauthorized remote file execution and system compromise."),
    ("Scanner", "Automated tools probing for system vulnerabilities. Potential exposure of security gaps exploitable by attackers."),
    ("Trojan", "Malware disguised as legitimate software for system compromise. Unauthorized access and data theft."),
    ("Webshell", "A hidden backdoor allowing remote system control. Data manipulation and complete system takeover."),
    ("Worm", "A self-propagating malware spreading without human intervention. Network-wide infection and resource depletion."),
    ("XSS", "A vulnerability allowing unauthorized script execution in web applications. Data theft and session hijacking."),
];

pub fn default_classes() -> Vec<VulnClass> {
    DEFAULT_CLASSES
        .iter()
        .enumerate()
        .map(|(i, (name, label))| VulnClass {
            id: ClassId(i as u32 + 1),
            name: (*name).to_string(),
            generic_label: (*label).to_string(),
        })
        .collect()
}

/// Case- and separator-insensitive key so that "Code-Execution",
/// "code_execution" and "Code execution" resolve to one class.
pub(crate) fn class_key(name: &str) -> String {
    name.trim()
        .chars()
        .filter(|c| !matches!(c, '-' | '_' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Description,
    Payload,
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleKind::Description => f.write_str("description"),
            SampleKind::Payload => f.write_str("payload"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub kind: SampleKind,
    pub text: Vec<u8>,
    pub class_id: ClassId,
    pub published: Option<NaiveDate>,
    /// Descriptions and the payload variants of one threat share this key.
    pub threat_id: String,
    /// Set when the payload was cut to the configured byte bound on load.
    pub truncated: bool,
}

impl Sample {
    pub fn text_lossy(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
    Template,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    classes: Vec<VulnClass>,
    samples: Vec<Sample>,
    provenance: Provenance,
    by_name: HashMap<String, ClassId>,
}

impl Corpus {
    /// Builds a corpus, checking class density, id uniqueness and that every
    /// sample references a known class with non-empty text.
    pub fn new(classes: Vec<VulnClass>, samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(classes.len());
        for (i, class) in classes.iter().enumerate() {
            if class.id.0 as usize != i + 1 {
                return Err(Error::Validation(format!(
                    "class ids must be dense from 1; position {} has id {}",
                    i + 1,
                    class.id
                )));
            }
            if class.generic_label.trim().is_empty() {
                return Err(Error::Validation(format!("class {} has an empty generic label", class.name)));
            }
            if by_name.insert(class_key(&class.name), class.id).is_some() {
                return Err(Error::Validation(format!("duplicate class name {}", class.name)));
            }
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for sample in &samples {
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id {}", sample.id)));
            }
            if sample.text.is_empty() {
                return Err(Error::Validation(format!("sample {} has empty text", sample.id)));
            }
            if sample.class_id.0 == 0 || sample.class_id.0 as usize > classes.len() {
                return Err(Error::Validation(format!(
                    "sample {} references unknown class id {}",
                    sample.id, sample.class_id
                )));
            }
        }
        Ok(Corpus {
            classes,
            samples,
            provenance,
            by_name,
        })
    }

    pub fn empty(classes: Vec<VulnClass>, provenance: Provenance) -> Result<Self> {
        Corpus::new(classes, Vec::new(), provenance)
    }

    pub fn classes(&self) -> &[VulnClass] {
        &self.classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class(&self, id: ClassId) -> Option<&VulnClass> {
        self.classes.get((id.0 as usize).checked_sub(1)?)
    }

    pub fn class_by_name(&self, name: &str) -> Option<&VulnClass> {
        self.by_name.get(&class_key(name)).and_then(|id| self.class(*id))
    }

    pub fn descriptions(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.kind == SampleKind::Description)
    }

    pub fn payloads(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.kind == SampleKind::Payload)
    }

    /// A corpus over the same classes keeping the samples selected by `keep`,
    /// in their original order.
    pub fn filtered(&self, mut keep: impl FnMut(&Sample) -> bool) -> Corpus {
        Corpus {
            classes: self.classes.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            provenance: self.provenance,
            by_name: self.by_name.clone(),
        }
    }

    /// Keeps the samples whose ids are listed, in corpus order.
    pub fn select_ids<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Corpus {
        let wanted: HashSet<&str> = ids.into_iter().collect();
        self.filtered(|s| wanted.contains(s.id.as_str()))
    }

    /// Per-class sample counts for one kind, indexed by class position.
    pub fn histogram(&self, kind: SampleKind) -> Vec<(ClassId, usize)> {
        let mut counts = vec![0usize; self.classes.len()];
        for sample in self.samples.iter().filter(|s| s.kind == kind) {
            counts[sample.class_id.0 as usize - 1] += 1;
        }
        self.classes.iter().map(|c| c.id).zip(counts).collect()
    }

    /// Appends samples from another corpus over identical classes.
    pub fn merged(&self, other: &Corpus) -> Result<Corpus> {
        if self.classes != other.classes {
            return Err(Error::Validation("cannot merge corpora with different class tables".into()));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Corpus::new(self.classes.clone(), samples, self.provenance)
    }
}
