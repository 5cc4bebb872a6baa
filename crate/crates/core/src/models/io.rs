//! Binary model container.
//!
//! ```text
//! magic "RSPM" | u16 version | u8 kind tag | u32 feature_dim | u64 seed | payload
//! ```
//!
//! All integers and floats are little-endian; parameters are f64, counts u32.
//! Payloads:
//! * linear: `u32 d`, `d` weights, bias;
//! * forest: `u32 n_trees`, then trees;
//! * boosting: init, `u32 n_trees`, then trees;
//! * mlp: `u32 n_layers`, then per layer `u32 out`, `u32 in`, weights row-major, biases.
//!
//! A tree is `u32 n_nodes` followed by nodes: `u8 0` + value for a leaf,
//! `u8 1` + `u32 feature`, threshold, `u32 left`, `u32 right` for a split.

use std::path::Path;

use super::mlp::Layer;
use super::tree::{Node, Tree};
use super::{ClassifierKind, Diagnostics, GradientBoosting, LinearModel, Mlp, ModelError, Params, RandomForest, Result, TrainedModel};
use crate::Matrix;

pub const MAGIC: &[u8; 4] = b"RSPM";
pub const FORMAT_VERSION: u16 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn tree(&mut self, t: &Tree) {
        self.u32(t.nodes.len());
        for n in &t.nodes {
            match *n {
                Node::Leaf { value } => {
                    self.u8(0);
                    self.f64(value);
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    self.u8(1);
                    self.u32(feature as usize);
                    self.f64(threshold);
                    self.u32(left as usize);
                    self.u32(right as usize);
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

fn corrupt(m: impl Into<String>) -> ModelError {
    ModelError::Corrupt(m.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Reads `n` floats, refusing counts the remaining bytes cannot hold.
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("count overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn tree(&mut self, feature_dim: usize) -> Result<Tree> {
        let n = self.u32()?;
        if n == 0 || n > self.buf.len() {
            return Err(corrupt(format!("tree with {n} nodes")));
        }
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(match self.u8()? {
                0 => Node::Leaf { value: self.f64()? },
                1 => {
                    let feature = self.u32()?;
                    let threshold = self.f64()?;
                    let (left, right) = (self.u32()?, self.u32()?);
                    if feature >= feature_dim || left >= n || right >= n || left == 0 || right == 0 {
                        return Err(corrupt("split refers outside the tree"));
                    }
                    Node::Split {
                        feature: feature as u32,
                        threshold,
                        left: left as u32,
                        right: right as u32,
                    }
                }
                t => return Err(corrupt(format!("unknown node tag {t}"))),
            });
        }
        let tree = Tree { nodes };
        check_acyclic(&tree)?;
        Ok(tree)
    }
}

/// Every node reachable from the root exactly once.
fn check_acyclic(t: &Tree) -> Result<()> {
    let mut seen = vec![false; t.nodes.len()];
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        if std::mem::replace(&mut seen[i], true) {
            return Err(corrupt("tree nodes are shared or cyclic"));
        }
        if let Node::Split { left, right, .. } = t.nodes[i] {
            stack.push(left as usize);
            stack.push(right as usize);
        }
    }
    Ok(())
}

pub fn model_to_bytes(m: &TrainedModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.u8(m.kind.tag());
    w.u32(m.feature_dim);
    w.0.extend_from_slice(&m.train_seed.to_le_bytes());
    match &m.params {
        Params::Linear(l) => {
            w.u32(l.weights.len());
            w.f64s(&l.weights);
            w.f64(l.bias);
        }
        Params::Forest(f) => {
            w.u32(f.trees.len());
            f.trees.iter().for_each(|t| w.tree(t));
        }
        Params::Boosting(b) => {
            w.f64(b.init);
            w.u32(b.trees.len());
            b.trees.iter().for_each(|t| w.tree(t));
        }
        Params::Mlp(net) => {
            w.u32(net.layers.len());
            for l in &net.layers {
                w.u32(l.weights.rows());
                w.u32(l.weights.cols());
                w.f64s(l.weights.as_slice());
                w.f64s(&l.bias);
            }
        }
    }
    w.0
}

pub fn model_from_bytes(buf: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { buf, at: 0 };
    let magic = r.take(4).map_err(|_| ModelError::VersionMismatch("file too short for a header".into()))?;
    if magic != MAGIC {
        return Err(ModelError::VersionMismatch(format!("bad magic {magic:?}")));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let tag = r.u8()?;
    let kind = ClassifierKind::from_tag(tag).ok_or_else(|| corrupt(format!("unknown kind tag {tag}")))?;
    let feature_dim = r.u32()?;
    let train_seed = r.u64()?;
    let params = match kind {
        ClassifierKind::SvmLinear | ClassifierKind::LogisticRegression => {
            let d = r.u32()?;
            if d != feature_dim {
                return Err(corrupt(format!("{d} weights for {feature_dim} features")));
            }
            let weights = r.f64s(d)?;
            Params::Linear(LinearModel {
                weights,
                bias: r.f64()?,
            })
        }
        ClassifierKind::RandomForest => {
            let n = r.u32()?;
            let trees = (0..n).map(|_| r.tree(feature_dim)).collect::<Result<_>>()?;
            Params::Forest(RandomForest { trees })
        }
        ClassifierKind::GradientBoosting => {
            let init = r.f64()?;
            let n = r.u32()?;
            let trees = (0..n).map(|_| r.tree(feature_dim)).collect::<Result<_>>()?;
            Params::Boosting(GradientBoosting { init, trees })
        }
        ClassifierKind::Mlp => {
            let n = r.u32()?;
            let mut layers = Vec::new();
            let mut expect_in = feature_dim;
            for _ in 0..n {
                let (out, inp) = (r.u32()?, r.u32()?);
                if inp != expect_in || out == 0 {
                    return Err(corrupt(format!("layer {inp}->{out} does not chain")));
                }
                let w = r.f64s(out.checked_mul(inp).ok_or_else(|| corrupt("layer too large"))?)?;
                let bias = r.f64s(out)?;
                layers.push(Layer {
                    weights: Matrix::from_vec(out, inp, w),
                    bias,
                });
                expect_in = out;
            }
            if n == 0 || expect_in != 1 {
                return Err(corrupt("network must end in one output unit"));
            }
            Params::Mlp(Mlp { layers })
        }
    };
    if r.at != buf.len() {
        return Err(corrupt(format!("{} trailing bytes", buf.len() - r.at)));
    }
    Ok(TrainedModel {
        kind,
        feature_dim,
        train_seed,
        params,
        diagnostics: Diagnostics::default(),
    })
}

pub fn save_model(m: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(m)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let buf = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_bytes(&buf)
}
