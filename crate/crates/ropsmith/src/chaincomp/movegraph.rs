//! Register move graph: registers are vertices, MoveReg gadgets are directed
//! edges. Chained moves emulate loaders the catalog lacks.

use std::collections::VecDeque;

use crate::regs::{Reg, RegSet};
use crate::semantics::GadgetClass;

use super::{ChainError, CompileCtx};

#[derive(Debug, Clone, Default)]
pub struct MovePath {
    /// Gadget indices applied in order; value flows src to dst.
    pub gadgets: Vec<usize>,
    /// Everything the path tramples beyond the destination.
    pub clobbers: RegSet,
}

/// Breadth-first search for a minimal move sequence carrying `src` into
/// `dst`. An empty path answers src == dst.
pub fn find_move_path(
    ctx: &CompileCtx,
    src: Reg,
    dst: Reg,
    max_len: usize,
) -> Result<MovePath, ChainError> {
    if src == dst {
        return Ok(MovePath::default());
    }

    // edges[from] = (to, gadget index), deterministic order
    let mut edges: Vec<(Reg, Reg, usize)> = Vec::new();
    for &gi in &ctx.gadget_order {
        for (class, _) in &ctx.gadgets[gi].classes {
            if let GadgetClass::MoveReg { dst: d, src: s } = class {
                edges.push((*s, *d, gi));
            }
        }
    }

    let mut prev: [Option<(Reg, usize)>; 16] = [None; 16];
    let mut seen = RegSet::single(src);
    let mut queue = VecDeque::new();
    queue.push_back((src, 0usize));
    while let Some((at, depth)) = queue.pop_front() {
        if at == dst {
            break;
        }
        if depth >= max_len {
            continue;
        }
        for (from, to, gi) in &edges {
            if *from == at && !seen.contains(*to) {
                seen.insert(*to);
                prev[to.index()] = Some((at, *gi));
                queue.push_back((*to, depth + 1));
            }
        }
    }

    if !seen.contains(dst) {
        return Err(ChainError::NoPath { src, dst });
    }

    let mut gadgets = Vec::new();
    let mut clobbers = RegSet::EMPTY;
    let mut at = dst;
    while at != src {
        let (from, gi) = prev[at.index()].expect("path is connected");
        gadgets.push(gi);
        clobbers = clobbers.union(ctx.gadgets[gi].writes);
        at = from;
    }
    gadgets.reverse();
    clobbers.remove(dst);
    Ok(MovePath { gadgets, clobbers })
}
