//! Blocking structures: partitions of the component axis into contiguous,
//! non-overlapping, near-equal blocks.
//!
//! For `P` blocks over `d` components the first `P-1` blocks hold
//! `floor(d/P)` components and the last absorbs the remainder. Images are
//! blocked the same way per axis, giving a grid of rectangles in row-major
//! block order.

use crate::error::{Error, Result};
use crate::series::{flat_index, ComponentSelector, Shape};

/// One block: its component set plus its position in grid coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub selector: ComponentSelector,
    pub region: BlockRegion,
}

/// Where a block sits, in 0-based inclusive grid coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockRegion {
    Range {
        start: usize,
        end: usize,
    },
    Rect {
        row_start: usize,
        row_end: usize,
        col_start: usize,
        col_end: usize,
    },
}

/// Block-count specification for one structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StructureSpec {
    OneD { p: usize },
    TwoD { p1: usize, p2: usize },
}

impl std::fmt::Display for StructureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            StructureSpec::OneD { p } => write!(f, "{p}"),
            StructureSpec::TwoD { p1, p2 } => write!(f, "{p1}x{p2}"),
        }
    }
}

/// A partition of the components into blocks for one spec.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockingStructure {
    /// 1-based position within its plan (0 when built standalone).
    pub id: usize,
    pub spec: StructureSpec,
    pub blocks: Vec<Block>,
}

fn axis_cuts(d: usize, p: usize) -> Vec<(usize, usize)> {
    // first p-1 segments of floor(d/p), remainder goes to the last
    let base = d / p;
    let mut cuts = Vec::with_capacity(p);
    for i in 0..p {
        let start = i * base;
        let end = if i + 1 == p { d } else { (i + 1) * base };
        cuts.push((start, end));
    }
    cuts
}

/// Splits `d` components into `p` contiguous blocks.
pub fn make_blocks_1d(d: usize, p: usize) -> Result<BlockingStructure> {
    if p < 1 || p > d {
        return Err(Error::invalid(format!(
            "need 1 <= P <= d, got P = {p}, d = {d}"
        )));
    }
    let blocks = axis_cuts(d, p)
        .into_iter()
        .map(|(start, end)| {
            Ok(Block {
                selector: ComponentSelector::contiguous(start, end, d)?,
                region: BlockRegion::Range {
                    start,
                    end: end - 1,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockingStructure {
        id: 0,
        spec: StructureSpec::OneD { p },
        blocks,
    })
}

/// Splits a `d1 x d2` image into `p1 x p2` rectangular blocks, row-major in
/// block order; selectors hold flat indices under the shared layout.
pub fn make_blocks_2d(d1: usize, d2: usize, p1: usize, p2: usize) -> Result<BlockingStructure> {
    if p1 < 1 || p1 > d1 || p2 < 1 || p2 > d2 {
        return Err(Error::invalid(format!(
            "need 1 <= P1 <= d1 and 1 <= P2 <= d2, got P = ({p1}, {p2}), shape = ({d1}, {d2})"
        )));
    }
    let d = d1 * d2;
    let row_cuts = axis_cuts(d1, p1);
    let col_cuts = axis_cuts(d2, p2);
    let mut blocks = Vec::with_capacity(p1 * p2);
    for &(r0, r1) in &row_cuts {
        for &(c0, c1) in &col_cuts {
            let mut indices = Vec::with_capacity((r1 - r0) * (c1 - c0));
            for r in r0..r1 {
                for c in c0..c1 {
                    indices.push(flat_index(r, c, d2));
                }
            }
            blocks.push(Block {
                selector: ComponentSelector::new(indices, d)?,
                region: BlockRegion::Rect {
                    row_start: r0,
                    row_end: r1 - 1,
                    col_start: c0,
                    col_end: c1 - 1,
                },
            });
        }
    }
    Ok(BlockingStructure {
        id: 0,
        spec: StructureSpec::TwoD { p1, p2 },
        blocks,
    })
}

/// An ordered family of distinct blocking structures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockingPlan {
    pub structures: Vec<BlockingStructure>,
}

impl BlockingPlan {
    /// Builds the structures for `specs` against `shape`. Duplicate specs
    /// are rejected: the ensemble average weights structures equally, so a
    /// duplicate would silently reweight it.
    pub fn new(specs: Vec<StructureSpec>, shape: Shape) -> Result<BlockingPlan> {
        if specs.is_empty() {
            return Err(Error::invalid("blocking plan needs at least one structure"));
        }
        for (i, a) in specs.iter().enumerate() {
            for b in specs[..i].iter() {
                if a == b {
                    return Err(Error::invalid(format!("duplicate blocking spec {a}")));
                }
            }
        }
        let mut structures = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let mut structure = match (spec, shape) {
                (StructureSpec::OneD { p }, Shape::OneD(d)) => make_blocks_1d(d, p)?,
                (StructureSpec::TwoD { p1, p2 }, Shape::TwoD { rows, cols }) => {
                    make_blocks_2d(rows, cols, p1, p2)?
                }
                (spec, shape) => {
                    return Err(Error::invalid(format!(
                        "blocking spec {spec} does not match series shape {shape}"
                    )))
                }
            };
            structure.id = i + 1;
            structures.push(structure);
        }
        Ok(BlockingPlan { structures })
    }

    /// Parses the CLI grammar: `1,4,10,20` for 1-D, `1x1,2x3,4x6` for 2-D.
    pub fn parse(text: &str, shape: Shape) -> Result<BlockingPlan> {
        let mut specs = Vec::new();
        for tok in text.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                return Err(Error::invalid(format!("empty block spec in {text:?}")));
            }
            let spec = if let Some((a, b)) = tok.split_once('x') {
                let p1: usize = a
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad block spec {tok:?}")))?;
                let p2: usize = b
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad block spec {tok:?}")))?;
                StructureSpec::TwoD { p1, p2 }
            } else {
                let p: usize = tok
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad block spec {tok:?}")))?;
                StructureSpec::OneD { p }
            };
            specs.push(spec);
        }
        BlockingPlan::new(specs, shape)
    }

    pub fn num_structures(&self) -> usize {
        self.structures.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.structures.iter().map(|s| s.blocks.len()).sum()
    }

    pub fn spec_strings(&self) -> Vec<String> {
        self.structures.iter().map(|s| s.spec.to_string()).collect()
    }
}

/// Default multiscale plan: `(1, 4, 10, 20, 40)` block counts for 1-D data
/// (dropping counts above `d`), and the ladder `(1,1), (4,6), (8,12),
/// (16,24)` for images (each axis clipped to its extent, duplicates merged).
/// Near-square blocks are favored; pass an explicit plan for anything else.
pub fn default_plan(shape: Shape) -> BlockingPlan {
    let specs = match shape {
        Shape::OneD(d) => [1usize, 4, 10, 20, 40]
            .iter()
            .filter(|&&p| p <= d)
            .map(|&p| StructureSpec::OneD { p })
            .collect::<Vec<_>>(),
        Shape::TwoD { rows, cols } => {
            let mut specs = Vec::new();
            for (p1, p2) in [(1usize, 1usize), (4, 6), (8, 12), (16, 24)] {
                let spec = StructureSpec::TwoD {
                    p1: p1.min(rows),
                    p2: p2.min(cols),
                };
                if !specs.contains(&spec) {
                    specs.push(spec);
                }
            }
            specs
        }
    };
    BlockingPlan::new(specs, shape).expect("default plan is always valid")
}
