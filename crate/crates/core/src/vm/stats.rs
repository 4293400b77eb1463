use std::collections::BTreeMap;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::ir::{InstrClass, Opcode, Origin, Site, SyncKind, Tag};

/// Dynamic execution counts.
///
/// Phis model register renaming and are tallied in `phis` only; every other
/// executed instruction is counted once in `total` and once in each
/// breakdown.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DynStats {
    pub total: u64,
    pub phis: u64,
    by_opcode: Vec<u64>,
    by_class: [u64; 7],
    by_origin: [[u64; 8]; 5],
}

impl DynStats {
    pub fn new() -> Self {
        DynStats { by_opcode: vec![0; Opcode::ALL.len()], ..Default::default() }
    }

    #[inline]
    pub(crate) fn record(&mut self, op: Opcode, origin: Origin) {
        if op == Opcode::Phi {
            self.phis += 1;
            return;
        }
        self.total += 1;
        self.by_opcode[op as usize] += 1;
        self.by_class[op.class().index()] += 1;
        self.by_origin[origin.tag.index()][origin.site.index()] += 1;
    }

    pub fn opcode(&self, op: Opcode) -> u64 {
        self.by_opcode.get(op as usize).copied().unwrap_or(0)
    }

    pub fn class(&self, c: InstrClass) -> u64 {
        self.by_class[c.index()]
    }

    /// Replicable plus scalar-fallback instructions.
    pub fn replicable(&self) -> u64 {
        self.class(InstrClass::Replicable) + self.class(InstrClass::ScalarFallback)
    }

    pub fn tag(&self, t: Tag) -> u64 {
        self.by_origin[t.index()].iter().sum()
    }

    pub fn origin(&self, t: Tag, s: Site) -> u64 {
        self.by_origin[t.index()][s.index()]
    }

    fn fraction(&self, k: SyncKind) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.class(InstrClass::Sync(k)) as f64 / self.total as f64
        }
    }

    pub fn loads_fraction(&self) -> f64 {
        self.fraction(SyncKind::Load)
    }

    pub fn stores_fraction(&self) -> f64 {
        self.fraction(SyncKind::Store)
    }

    pub fn branches_fraction(&self) -> f64 {
        self.fraction(SyncKind::Branch)
    }
}

impl Serialize for DynStats {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let opcodes: BTreeMap<String, u64> = Opcode::ALL
            .iter()
            .filter(|op| self.opcode(**op) > 0)
            .map(|op| (format!("{op:?}").to_lowercase(), self.opcode(*op)))
            .collect();
        let classes: BTreeMap<&str, u64> =
            InstrClass::ALL.iter().map(|c| (c.name(), self.class(*c))).collect();
        let mut tags: BTreeMap<String, u64> = BTreeMap::new();
        for t in Tag::ALL {
            for site in Site::ALL {
                let n = self.origin(t, site);
                if n > 0 {
                    let key = if site == Site::None {
                        t.name().to_string()
                    } else {
                        format!("{}:{}", t.name(), site.name())
                    };
                    tags.insert(key, n);
                }
            }
        }
        let mut st = s.serialize_struct("DynStats", 8)?;
        st.serialize_field("total", &self.total)?;
        st.serialize_field("phis", &self.phis)?;
        st.serialize_field("by_class", &classes)?;
        st.serialize_field("by_origin", &tags)?;
        st.serialize_field("by_opcode", &opcodes)?;
        st.serialize_field("loads_fraction", &self.loads_fraction())?;
        st.serialize_field("stores_fraction", &self.stores_fraction())?;
        st.serialize_field("branches_fraction", &self.branches_fraction())?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_sum_to_total() {
        let mut s = DynStats::new();
        s.record(Opcode::Add, Origin::ORIGINAL);
        s.record(Opcode::Load, Origin::new(Tag::Wrapper, Site::Load));
        s.record(Opcode::Ptest, Origin::new(Tag::Check, Site::Branch));
        s.record(Opcode::Phi, Origin::ORIGINAL);
        assert_eq!(s.total, 3);
        assert_eq!(s.phis, 1);
        assert_eq!(Tag::ALL.iter().map(|t| s.tag(*t)).sum::<u64>(), s.total);
        assert!((s.loads_fraction() - 1.0 / 3.0).abs() < 1e-12);
    }
}
