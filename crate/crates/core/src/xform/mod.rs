//! Hardening transformations.

mod elzar;
mod swiftr;

pub use elzar::harden;
pub use swiftr::{harden_triplicate, majority_vote};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{BlockId, Function, Instr, IrError, Op, Origin, RecoveryMode, Type, ValueId};

/// Which synchronization points get checks, and how recovery votes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardenConfig {
    pub checks: Checks,
    pub recovery: RecoveryMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Checks {
    pub loads: bool,
    pub stores: bool,
    pub branches: bool,
    /// Calls and returns.
    pub other: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks { loads: true, stores: true, branches: true, other: true }
    }
}

impl Default for HardenConfig {
    fn default() -> Self {
        HardenConfig { checks: Checks::default(), recovery: RecoveryMode::Extended }
    }
}

impl HardenConfig {
    pub fn with_checks(loads: bool, stores: bool, branches: bool, other: bool) -> Self {
        HardenConfig { checks: Checks { loads, stores, branches, other }, ..Default::default() }
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum XformError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("@{func}: cannot harden `{opcode}`; input must be an unhardened scalar program")]
    Unsupported { func: String, opcode: String },
}

/// Incremental function construction with unique value names and block labels.
pub(crate) struct Builder {
    pub f: Function,
    names: HashSet<String>,
    labels: HashSet<String>,
    pub cur: usize,
}

impl Builder {
    /// Starts from `f` with every block emptied (labels and values kept).
    pub fn new(mut f: Function) -> Self {
        for b in &mut f.blocks {
            b.instrs.clear();
        }
        let names = f.values.iter().map(|v| v.name.clone()).collect();
        let labels = f.blocks.iter().map(|b| b.label.clone()).collect();
        Builder { f, names, labels, cur: 0 }
    }

    pub fn fresh(&mut self, base: &str, ty: Type) -> ValueId {
        let mut name = base.to_string();
        let mut k = 0;
        while self.names.contains(&name) {
            k += 1;
            name = format!("{base}.{k}");
        }
        self.names.insert(name.clone());
        self.f.add_value(name, ty)
    }

    pub fn emit_to(&mut self, result: Option<ValueId>, op: Op, origin: Origin) {
        self.f.blocks[self.cur].instrs.push(Instr { result, op, origin });
    }

    /// Emits an instruction producing a fresh value of type `ty`.
    pub fn emit(&mut self, base: &str, ty: Type, op: Op, origin: Origin) -> ValueId {
        let v = self.fresh(base, ty);
        self.emit_to(Some(v), op, origin);
        v
    }

    pub fn new_block(&mut self, base: &str) -> usize {
        let mut label = base.to_string();
        let mut k = 0;
        while self.labels.contains(&label) {
            k += 1;
            label = format!("{base}{k}");
        }
        self.labels.insert(label.clone());
        self.f.blocks.push(crate::ir::Block { label, instrs: Vec::new() });
        self.f.blocks.len() - 1
    }

    pub fn name(&self, v: ValueId) -> String {
        self.f.value(v).name.clone()
    }

    /// Rewrites phi predecessors in the original blocks `0..n` from original
    /// block ids to the blocks that now hold the original terminators, then
    /// adds entries for extra edges `(target, original source, new source)`.
    pub fn fix_phis(&mut self, n: usize, exit: &[usize], extra: &[(usize, usize, usize)]) {
        for (bi, block) in self.f.blocks.iter_mut().enumerate().take(n) {
            for ins in &mut block.instrs {
                let Op::Phi { incoming } = &mut ins.op else { break };
                let mut added = Vec::new();
                for &(target, src, new_src) in extra {
                    if target != bi {
                        continue;
                    }
                    if let Some((v, _)) = incoming.iter().find(|(_, b)| b.index() == src) {
                        added.push((*v, BlockId(new_src as u32)));
                    }
                }
                for (_, b) in incoming.iter_mut() {
                    *b = BlockId(exit[b.index()] as u32);
                }
                for a in added {
                    if !incoming.contains(&a) {
                        incoming.push(a);
                    }
                }
            }
        }
    }

    pub fn finish(mut self) -> Function {
        self.f.renumber();
        self.f
    }
}
