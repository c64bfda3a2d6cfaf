//! Binary model file.
//!
//! Layout (little endian):
//!
//! ```text
//! "NOFT" | version u16 | flags u16 | body_len u64 | body | sha256(all preceding bytes)
//! ```
//!
//! The body holds the model kind, seed, hyperparameters, feature layout,
//! class names, the optional vocabulary, every tree as a flat node array
//! (feature `-1` marks a leaf) and any tagged extension sections.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::{FeatureRule, ForestError, ForestModel, HyperParams, ModelKind, Node, Tree};
use crate::vectorize::{TokenizerConfig, Vocabulary};

pub const FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"NOFT";
const FLAG_VOCABULARY: u16 = 1;

/// Opaque tagged section stored after the trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub tag: [u8; 4],
    pub data: Vec<u8>,
}

pub fn save(model: &ForestModel, path: impl AsRef<Path>) -> Result<(), ForestError> {
    save_with_extensions(model, &[], path)
}

pub fn load(path: impl AsRef<Path>) -> Result<ForestModel, ForestError> {
    load_with_extensions(path).map(|(m, _)| m)
}

pub fn save_with_extensions(
    model: &ForestModel,
    extensions: &[Extension],
    path: impl AsRef<Path>,
) -> Result<(), ForestError> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model, extensions)).map_err(|source| ForestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_with_extensions(
    path: impl AsRef<Path>,
) -> Result<(ForestModel, Vec<Extension>), ForestError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ForestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

/// Serialises a model. Output is a pure function of the model.
pub fn to_bytes(model: &ForestModel, extensions: &[Extension]) -> Vec<u8> {
    let mut body = Vec::new();
    write_body(&mut body, model, extensions).expect("writing to a Vec cannot fail");
    let mut out = Vec::with_capacity(body.len() + 48);
    out.extend_from_slice(MAGIC);
    out.write_u16::<LE>(FORMAT_VERSION).unwrap();
    let flags = if model.vocabulary.is_some() { FLAG_VOCABULARY } else { 0 };
    out.write_u16::<LE>(flags).unwrap();
    out.write_u64::<LE>(body.len() as u64).unwrap();
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ForestModel, Vec<Extension>), ForestError> {
    if bytes.len() < 4 {
        return Err(ForestError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(ForestError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(ForestError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(ForestError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    let body_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(body_len).ok_or(ForestError::Truncated)?;
    if bytes.len() < end + 32 {
        return Err(ForestError::Truncated);
    }
    if bytes.len() > end + 32 {
        return Err(ForestError::Corrupt("trailing bytes after checksum".into()));
    }
    if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
        return Err(ForestError::Checksum);
    }
    let mut r = Cursor::new(&bytes[16..end]);
    let parsed = read_body(&mut r, flags & FLAG_VOCABULARY != 0).map_err(|e| match e {
        ReadError::Io(_) => ForestError::Truncated,
        ReadError::Corrupt(m) => ForestError::Corrupt(m),
    })?;
    if r.position() as usize != body_len {
        return Err(ForestError::Corrupt("unread bytes in body".into()));
    }
    Ok(parsed)
}

fn write_str(w: &mut Vec<u8>, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_body(w: &mut Vec<u8>, m: &ForestModel, ext: &[Extension]) -> std::io::Result<()> {
    w.write_u8(match m.kind {
        ModelKind::Regressor => 0,
        ModelKind::Classifier => 1,
    })?;
    w.write_u64::<LE>(m.train_seed)?;

    let hp = &m.hyperparams;
    w.write_u32::<LE>(hp.n_trees as u32)?;
    w.write_i64::<LE>(hp.max_depth.map_or(-1, |d| d as i64))?;
    w.write_u32::<LE>(hp.min_samples_split as u32)?;
    w.write_u8(hp.bootstrap as u8)?;
    let (rule, frac) = match hp.features_per_split {
        FeatureRule::Auto => (0, 0.0),
        FeatureRule::Sqrt => (1, 0.0),
        FeatureRule::All => (2, 0.0),
        FeatureRule::Fraction(f) => (3, f),
    };
    w.write_u8(rule)?;
    w.write_f64::<LE>(frac)?;

    w.write_u32::<LE>(m.n_features as u32)?;
    w.write_u32::<LE>(m.extra_features.len() as u32)?;
    for name in &m.extra_features {
        write_str(w, name)?;
    }
    w.write_u32::<LE>(m.classes.len() as u32)?;
    for c in &m.classes {
        write_str(w, c)?;
    }

    if let Some(voc) = &m.vocabulary {
        let cfg = voc.config();
        w.write_u8(cfg.lowercase as u8)?;
        w.write_u32::<LE>(cfg.min_doc_freq as u32)?;
        w.write_i64::<LE>(cfg.max_features.map_or(-1, |v| v as i64))?;
        w.write_u8(cfg.smooth_idf as u8)?;
        w.write_u64::<LE>(voc.n_docs() as u64)?;
        w.write_u32::<LE>(voc.len() as u32)?;
        for (t, df) in voc.terms().iter().zip(voc.doc_freq()) {
            write_str(w, t)?;
            w.write_u64::<LE>(*df as u64)?;
        }
    }

    w.write_u32::<LE>(m.trees.len() as u32)?;
    for tree in &m.trees {
        w.write_u32::<LE>(tree.nodes.len() as u32)?;
        for node in &tree.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.write_i32::<LE>(*feature as i32)?;
                    w.write_f64::<LE>(*threshold)?;
                    w.write_u32::<LE>(*left as u32)?;
                    w.write_u32::<LE>(*right as u32)?;
                    w.write_u32::<LE>(0)?;
                }
                Node::Leaf { value } => {
                    w.write_i32::<LE>(-1)?;
                    w.write_f64::<LE>(0.0)?;
                    w.write_u32::<LE>(0)?;
                    w.write_u32::<LE>(0)?;
                    w.write_u32::<LE>(value.len() as u32)?;
                    for v in value {
                        w.write_f64::<LE>(*v)?;
                    }
                }
            }
        }
    }

    w.write_u32::<LE>(ext.len() as u32)?;
    for e in ext {
        w.write_all(&e.tag)?;
        w.write_u64::<LE>(e.data.len() as u64)?;
        w.write_all(&e.data)?;
    }
    Ok(())
}

enum ReadError {
    Io(#[allow(dead_code)] std::io::Error),
    Corrupt(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

fn corrupt(msg: impl Into<String>) -> ReadError {
    ReadError::Corrupt(msg.into())
}

/// Guards allocations driven by length fields.
fn bounded_len(r: &Cursor<&[u8]>, n: u64, min_item: u64) -> Result<usize, ReadError> {
    let left = r.get_ref().len() as u64 - r.position();
    if n.saturating_mul(min_item) > left {
        return Err(ReadError::Io(std::io::ErrorKind::UnexpectedEof.into()));
    }
    Ok(n as usize)
}

fn read_str(r: &mut Cursor<&[u8]>) -> Result<String, ReadError> {
    let n = r.read_u32::<LE>()? as u64;
    let n = bounded_len(r, n, 1)?;
    let mut buf = vec![0; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| corrupt("string is not utf-8"))
}

fn read_body(
    r: &mut Cursor<&[u8]>,
    has_vocabulary: bool,
) -> Result<(ForestModel, Vec<Extension>), ReadError> {
    let kind = match r.read_u8()? {
        0 => ModelKind::Regressor,
        1 => ModelKind::Classifier,
        k => return Err(corrupt(format!("unknown model kind {k}"))),
    };
    let train_seed = r.read_u64::<LE>()?;
    let n_trees = r.read_u32::<LE>()? as usize;
    let max_depth = match r.read_i64::<LE>()? {
        -1 => None,
        d if d >= 0 => Some(d as usize),
        d => return Err(corrupt(format!("bad max_depth {d}"))),
    };
    let min_samples_split = r.read_u32::<LE>()? as usize;
    let bootstrap = r.read_u8()? != 0;
    let rule = r.read_u8()?;
    let frac = r.read_f64::<LE>()?;
    let features_per_split = match rule {
        0 => FeatureRule::Auto,
        1 => FeatureRule::Sqrt,
        2 => FeatureRule::All,
        3 => FeatureRule::Fraction(frac),
        k => return Err(corrupt(format!("unknown feature rule {k}"))),
    };
    let hyperparams = HyperParams {
        n_trees,
        max_depth,
        min_samples_split,
        bootstrap,
        features_per_split,
    };

    let n_features = r.read_u32::<LE>()? as usize;
    let n_extra = r.read_u32::<LE>()? as u64;
    let n_extra = bounded_len(r, n_extra, 4)?;
    let extra_features = (0..n_extra).map(|_| read_str(r)).collect::<Result<_, _>>()?;
    let n_classes = r.read_u32::<LE>()? as u64;
    let n_classes = bounded_len(r, n_classes, 4)?;
    let classes: Vec<String> = (0..n_classes).map(|_| read_str(r)).collect::<Result<_, _>>()?;

    let vocabulary = if has_vocabulary {
        let lowercase = r.read_u8()? != 0;
        let min_doc_freq = r.read_u32::<LE>()? as usize;
        let max_features = match r.read_i64::<LE>()? {
            -1 => None,
            v if v >= 0 => Some(v as usize),
            v => return Err(corrupt(format!("bad max_features {v}"))),
        };
        let smooth_idf = r.read_u8()? != 0;
        let n_docs = r.read_u64::<LE>()? as usize;
        let n_terms = r.read_u32::<LE>()? as u64;
        let n_terms = bounded_len(r, n_terms, 12)?;
        let mut terms = Vec::with_capacity(n_terms);
        let mut df = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            terms.push(read_str(r)?);
            df.push(r.read_u64::<LE>()? as usize);
        }
        if terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(corrupt("vocabulary terms not sorted"));
        }
        let cfg = TokenizerConfig {
            lowercase,
            min_doc_freq,
            max_features,
            smooth_idf,
        };
        Some(Vocabulary::from_parts(terms, df, n_docs, cfg))
    } else {
        None
    };

    let tree_count = r.read_u32::<LE>()? as u64;
    let tree_count = bounded_len(r, tree_count, 4)?;
    let leaf_len = match kind {
        ModelKind::Regressor => 1,
        ModelKind::Classifier => classes.len(),
    };
    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        let n_nodes = r.read_u32::<LE>()? as u64;
        let n_nodes = bounded_len(r, n_nodes, 24)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let feature = r.read_i32::<LE>()?;
            let threshold = r.read_f64::<LE>()?;
            let left = r.read_u32::<LE>()? as usize;
            let right = r.read_u32::<LE>()? as usize;
            let payload = r.read_u32::<LE>()? as u64;
            let payload = bounded_len(r, payload, 8)?;
            if feature < 0 {
                if payload != leaf_len {
                    return Err(corrupt("leaf payload has wrong length"));
                }
                let value = (0..payload)
                    .map(|_| r.read_f64::<LE>())
                    .collect::<Result<_, _>>()?;
                nodes.push(Node::Leaf { value });
            } else {
                // Children are always stored after their parent, which rules out cycles.
                if payload != 0
                    || feature as usize >= n_features
                    || left <= i
                    || right <= i
                    || left >= n_nodes
                    || right >= n_nodes
                {
                    return Err(corrupt(format!("invalid split node {i}")));
                }
                nodes.push(Node::Split {
                    feature: feature as usize,
                    threshold,
                    left,
                    right,
                });
            }
        }
        if nodes.is_empty() {
            return Err(corrupt("tree with no nodes"));
        }
        trees.push(Tree { nodes });
    }
    if trees.is_empty() {
        return Err(corrupt("model with no trees"));
    }

    let n_ext = r.read_u32::<LE>()? as u64;
    let n_ext = bounded_len(r, n_ext, 12)?;
    let mut extensions = Vec::with_capacity(n_ext);
    for _ in 0..n_ext {
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag)?;
        let len = r.read_u64::<LE>()?;
        let len = bounded_len(r, len, 1)?;
        let mut data = vec![0; len];
        r.read_exact(&mut data)?;
        extensions.push(Extension { tag, data });
    }

    Ok((
        ForestModel {
            kind,
            trees,
            classes,
            hyperparams,
            train_seed,
            n_features,
            vocabulary,
            extra_features,
        },
        extensions,
    ))
}
