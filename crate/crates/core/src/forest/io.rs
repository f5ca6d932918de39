use std::io::{Read, Write};

use super::{Forest, Node, Tree};
use crate::error::{Error, Result};

pub const FOREST_MAGIC: &[u8; 5] = b"FMRF1";

const LEAF: u8 = 0;
const SPLIT: u8 = 1;

/// Layout (little endian): magic, n_features, m_try, n_trees, n_rows as
/// u64; per tree n_nodes u64, then nodes as a tag byte followed by either
/// the leaf value f64 or feature u64, threshold f64, left u64, right u64;
/// then one in-bag byte per training row.
pub fn write_forest<W: Write>(forest: &Forest, mut out: W) -> Result<()> {
    let n_rows = forest.in_bag.first().map_or(0, Vec::len);
    out.write_all(FOREST_MAGIC)?;
    for v in [forest.n_features, forest.m_try, forest.trees.len(), n_rows] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for (tree, bag) in forest.trees.iter().zip(&forest.in_bag) {
        out.write_all(&(tree.nodes.len() as u64).to_le_bytes())?;
        for node in &tree.nodes {
            match *node {
                Node::Leaf(v) => {
                    out.write_all(&[LEAF])?;
                    out.write_all(&v.to_le_bytes())?;
                }
                Node::Split { feature, threshold, left, right } => {
                    out.write_all(&[SPLIT])?;
                    out.write_all(&(feature as u64).to_le_bytes())?;
                    out.write_all(&threshold.to_le_bytes())?;
                    out.write_all(&(left as u64).to_le_bytes())?;
                    out.write_all(&(right as u64).to_le_bytes())?;
                }
            }
        }
        let bytes: Vec<u8> = bag.iter().map(|&b| u8::from(b)).collect();
        out.write_all(&bytes)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("count overflows usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
}

fn corrupt(msg: &str) -> Error {
    Error::DataIntegrity(format!("corrupt forest file: {msg}"))
}

pub fn read_forest<R: Read>(input: R) -> Result<Forest> {
    let mut r = Reader { inner: input };
    let mut magic = [0u8; 5];
    r.inner.read_exact(&mut magic)?;
    if &magic != FOREST_MAGIC {
        return Err(Error::DataIntegrity("not a forest file".into()));
    }
    let n_features = r.usize()?;
    let m_try = r.usize()?;
    let n_trees = r.usize()?;
    let n_rows = r.usize()?;
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    let mut in_bag = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let n_nodes = r.usize()?;
        if n_nodes == 0 {
            return Err(corrupt("empty tree"));
        }
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for _ in 0..n_nodes {
            nodes.push(match r.u8()? {
                LEAF => Node::Leaf(r.f64()?),
                SPLIT => {
                    let feature = r.usize()?;
                    let threshold = r.f64()?;
                    let (left, right) = (r.usize()?, r.usize()?);
                    if feature >= n_features || left >= n_nodes || right >= n_nodes {
                        return Err(corrupt("node index out of range"));
                    }
                    Node::Split { feature, threshold, left, right }
                }
                _ => return Err(corrupt("unknown node tag")),
            });
        }
        // Children always follow their parent, so traversal terminates.
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = *n {
                if left <= i || right <= i {
                    return Err(corrupt("child precedes parent"));
                }
            }
        }
        let mut bytes = vec![0u8; n_rows];
        r.inner.read_exact(&mut bytes)?;
        trees.push(Tree { nodes });
        in_bag.push(bytes.into_iter().map(|b| b != 0).collect());
    }
    Ok(Forest {
        n_features,
        m_try,
        trees,
        in_bag,
    })
}
