use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{ImageEncoder, Vocabulary};
use crate::error::{Error, Result};
use crate::knowledge::{EntrySource, KnowledgeBank, KnowledgeEntry, KnowledgeKind, PromptSet};
use crate::numerics::{l2_normalize_rows, Tensor2, DEFAULT_EPS};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d_in: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Pull of each prototype toward its class anchor, in `[0, 1]`. Zero
    /// gives i.i.d. uniform prototypes.
    pub align: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            k: 8,
            d_in: 64,
            per_class_train: 16,
            per_class_test: 20,
            sigma: 0.35,
            seed: 0,
            align: DEFAULT_ALIGN,
        }
    }
}

/// Prototype alignment of the pinned benchmark: the grid value (step 0.05)
/// whose plain zero-shot top-1, averaged over data seeds 0..4, lands
/// closest to 58.77%, the average zero-shot CLIP accuracy over the eleven
/// benchmark datasets.
pub const DEFAULT_ALIGN: f64 = 0.4;

/// Whether feature rows are raw inputs for the toy image tower or already
/// image embeddings (`I0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Raw,
    Embedding,
}

impl FromStr for FeatureSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FeatureSpace::Raw),
            "embedding" => Ok(FeatureSpace::Embedding),
            other => Err(Error::Input(format!("unknown feature space {other:?}"))),
        }
    }
}

impl FeatureSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSpace::Raw => "raw",
            FeatureSpace::Embedding => "embedding",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Tensor2,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub classes: Vec<String>,
    pub space: FeatureSpace,
    pub train: Split,
    pub test: Split,
    /// Set for synthetic datasets only.
    pub prototypes: Option<Tensor2>,
    pub spec: Option<SyntheticSpec>,
}

impl Dataset {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.train.x.cols()
    }

    /// Frozen image embeddings of a split.
    pub fn embed(&self, split: &Split, image: &ImageEncoder) -> Result<Tensor2> {
        match self.space {
            FeatureSpace::Raw => Ok(image.encode_batch(&split.x)?.out),
            FeatureSpace::Embedding => Ok(l2_normalize_rows(&split.x, DEFAULT_EPS).out),
        }
    }
}

pub fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

/// Per-class `(VK, NVK, PK)` fixture texts: class-unique tokens carried by
/// shared descriptor words.
pub fn synthetic_knowledge(class: usize) -> [String; 3] {
    let c = format!("class_{class}");
    [
        format!("{c} object with shape_{class} outline and hue_{class} surface"),
        format!("{c} often used for role_{class} and known for habit_{class}"),
        format!("{c} object with shape_{class} outline used for role_{class}"),
    ]
}

pub fn synthetic_bank(classes: &[String], dataset_id: &str) -> KnowledgeBank {
    let mut bank = KnowledgeBank::new(dataset_id, "fixture");
    for (i, c) in classes.iter().enumerate() {
        let [vk, nvk, pk] = synthetic_knowledge(i);
        bank.entries.insert(
            c.clone(),
            KnowledgeEntry {
                vk,
                nvk,
                pk,
                source: EntrySource::Fixture,
            },
        );
    }
    bank
}

/// `(prompt, reply)` pairs a fixture store needs to regenerate
/// [`synthetic_bank`] through the generation pipeline.
pub fn synthetic_fixture_pairs(
    classes: &[String],
    prompts: &PromptSet,
) -> Result<Vec<(String, String)>> {
    let mut out = Vec::with_capacity(classes.len() * 3);
    for (i, c) in classes.iter().enumerate() {
        let texts = synthetic_knowledge(i);
        for (kind, text) in KnowledgeKind::ALL.iter().zip(texts) {
            out.push((prompts.get(*kind).render(c)?, text));
        }
    }
    Ok(out)
}

/// Vocabulary over class names, every bank description and the template.
pub fn build_vocabulary(
    classes: &[String],
    bank: &KnowledgeBank,
    template: &str,
    max_size: usize,
) -> Vocabulary {
    let mut texts: Vec<&str> = classes.iter().map(String::as_str).collect();
    for e in bank.entries.values() {
        texts.extend([e.vk.as_str(), e.nvk.as_str(), e.pk.as_str()]);
    }
    texts.push(template);
    Vocabulary::build(texts, max_size)
}

fn noisy_samples(
    protos: &Tensor2,
    per_class: usize,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<Split> {
    let (k, d) = protos.shape();
    let mut data = Vec::with_capacity(k * per_class * d);
    let mut labels = Vec::with_capacity(k * per_class);
    for c in 0..k {
        for _ in 0..per_class {
            data.extend(protos.row(c).iter().map(|p| p + sigma * rng.normal()));
            labels.push(c);
        }
    }
    let x = l2_normalize_rows(&Tensor2::from_vec(labels.len(), d, data)?, DEFAULT_EPS).out;
    Ok(Split { x, labels })
}

/// Test split drawn from `protos` at noise `sigma`. The stream depends on
/// the dataset seed only, so equal sigmas give identical splits.
pub fn test_split(protos: &Tensor2, per_class: usize, sigma: f64, seed: u64) -> Result<Split> {
    noisy_samples(
        protos,
        per_class,
        sigma,
        &mut SeededRng::new(derive_seed(seed, "synthetic-test")),
    )
}

/// Prototypes are `normalize(align * a_c + (1 - align) * u_c)` with `u_c`
/// uniform on the sphere and `a_c` the unit rows of `anchors` (required when
/// `align > 0`).
pub fn make_synthetic(spec: &SyntheticSpec, anchors: Option<&Tensor2>) -> Result<Dataset> {
    if spec.k < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {}",
            spec.k
        )));
    }
    if spec.d_in == 0 || spec.sigma < 0.0 || !spec.sigma.is_finite() {
        return Err(Error::Config(format!("invalid synthetic spec {spec:?}")));
    }
    let mut rng = SeededRng::new(derive_seed(spec.seed, "synthetic-prototypes"));
    let mut prototypes = l2_normalize_rows(
        &Tensor2::randn(spec.k, spec.d_in, 1.0, &mut rng),
        DEFAULT_EPS,
    )
    .out;
    if !(0.0..=1.0).contains(&spec.align) {
        return Err(Error::Config(format!(
            "align must be in [0, 1], got {}",
            spec.align
        )));
    }
    if spec.align > 0.0 {
        let a = anchors.ok_or_else(|| Error::Config("align > 0 needs class anchors".into()))?;
        if a.shape() != prototypes.shape() {
            return Err(Error::dim(
                "synthetic_anchors",
                a.shape(),
                prototypes.shape(),
            ));
        }
        let a = l2_normalize_rows(a, DEFAULT_EPS).out;
        let mut mixed = prototypes.scale(1.0 - spec.align);
        mixed.axpy(spec.align, &a)?;
        prototypes = l2_normalize_rows(&mixed, DEFAULT_EPS).out;
    }
    let mut train_rng = SeededRng::new(derive_seed(spec.seed, "synthetic-train"));
    let train = noisy_samples(
        &prototypes,
        spec.per_class_train,
        spec.sigma,
        &mut train_rng,
    )?;
    let test = test_split(&prototypes, spec.per_class_test, spec.sigma, spec.seed)?;
    Ok(Dataset {
        name: format!(
            "toy-k{}-d{}-s{}-seed{}",
            spec.k, spec.d_in, spec.sigma, spec.seed
        ),
        classes: class_names(spec.k),
        space: FeatureSpace::Raw,
        train,
        test,
        prototypes: Some(prototypes),
        spec: Some(spec.clone()),
    })
}

/// Exactly `shots` training items per class, sampled without replacement,
/// returned in a seeded shuffled order.
pub fn sample_shots(ds: &Dataset, shots: usize, seed: u64) -> Result<Split> {
    if shots == 0 {
        return Err(Error::Protocol("shots must be positive".into()));
    }
    let mut rng = SeededRng::new(derive_seed(seed, "shots"));
    let mut picked = Vec::with_capacity(shots * ds.k());
    for c in 0..ds.k() {
        let mut idx: Vec<usize> = (0..ds.train.len())
            .filter(|&i| ds.train.labels[i] == c)
            .collect();
        if idx.len() < shots {
            return Err(Error::Protocol(format!(
                "class {:?} has {} training items, {shots} shots requested",
                ds.classes[c],
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        picked.extend_from_slice(&idx[..shots]);
    }
    rng.shuffle(&mut picked);
    Ok(Split {
        x: ds.train.x.select_rows(&picked),
        labels: picked.iter().map(|&i| ds.train.labels[i]).collect(),
    })
}

/// Feature file: `#dim=<d> classes=<k>[ space=raw|embedding]` then
/// `label,f0,...,f{d-1}` rows. Without a `space` tag rows are embeddings.
pub fn write_features(split: &Split, k: usize, space: FeatureSpace) -> String {
    let mut out = format!("#dim={} classes={k}", split.x.cols());
    if space == FeatureSpace::Raw {
        out.push_str(" space=raw");
    }
    out.push('\n');
    for (label, row) in split.labels.iter().zip(split.x.iter_rows()) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub k: usize,
    pub space: FeatureSpace,
    pub split: Split,
}

pub fn parse_features(text: &str) -> Result<FeatureFile> {
    let bad = |detail: String| Error::Format {
        what: "feature file",
        detail,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|h| h.strip_prefix('#'))
        .ok_or_else(|| bad("missing `#dim=<d> classes=<k>` header".into()))?;
    let (mut dim, mut k, mut space) = (None, None, FeatureSpace::Embedding);
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            Some(("classes", v)) => k = v.parse::<usize>().ok(),
            Some(("space", v)) => space = v.parse()?,
            _ => return Err(bad(format!("unknown header field {field:?}"))),
        }
    }
    let (d, k) = match (dim, k) {
        (Some(d), Some(k)) if d > 0 && k > 0 => (d, k),
        _ => return Err(bad("header needs positive dim and classes".into())),
    };
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = n + 2;
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| bad(format!("line {row}: bad label")))?;
        if label >= k {
            return Err(Error::Validation(format!(
                "line {row}: label {label} outside [0, {k})"
            )));
        }
        let before = data.len();
        for f in fields {
            data.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {row}: {e}")))?,
            );
        }
        if data.len() - before != d {
            return Err(Error::Validation(format!(
                "line {row}: {} values, header says dim={d}",
                data.len() - before
            )));
        }
        labels.push(label);
    }
    Ok(FeatureFile {
        k,
        space,
        split: Split {
            x: Tensor2::from_vec(labels.len(), d, data)?,
            labels,
        },
    })
}

pub fn import_features(path: &Path) -> Result<FeatureFile> {
    parse_features(&std::fs::read_to_string(path)?)
}

/// On-disk dataset directory: `classes.txt`, `train.features`,
/// `test.features`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut classes = ds.classes.join("\n");
    classes.push('\n');
    std::fs::write(dir.join("classes.txt"), classes)?;
    std::fs::write(
        dir.join("train.features"),
        write_features(&ds.train, ds.k(), ds.space),
    )?;
    std::fs::write(
        dir.join("test.features"),
        write_features(&ds.test, ds.k(), ds.space),
    )?;
    Ok(())
}

pub fn read_class_list(path: &Path) -> Result<Vec<String>> {
    let classes: Vec<String> = std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if classes.is_empty() {
        return Err(Error::Input(format!("{} lists no classes", path.display())));
    }
    Ok(classes)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let classes = read_class_list(&dir.join("classes.txt"))?;
    let train = import_features(&dir.join("train.features"))?;
    let test = import_features(&dir.join("test.features"))?;
    for f in [&train, &test] {
        if f.k != classes.len() {
            return Err(Error::Validation(format!(
                "feature file declares {} classes, classes.txt lists {}",
                f.k,
                classes.len()
            )));
        }
    }
    if train.space != test.space || train.split.x.cols() != test.split.x.cols() {
        return Err(Error::Validation(
            "train and test feature files disagree".into(),
        ));
    }
    Ok(Dataset {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        classes,
        space: train.space,
        train: train.split,
        test: test.split,
        prototypes: None,
        spec: None,
    })
}
