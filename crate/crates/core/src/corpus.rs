//! Built-in benchmark kernels with known outputs.

use serde::Serialize;

use crate::ir::{parse_program, IrError, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    MemoryHeavy,
    BranchHeavy,
    FpArithmetic,
    IntegerArithmetic,
    Division,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::MemoryHeavy,
        Category::BranchHeavy,
        Category::FpArithmetic,
        Category::IntegerArithmetic,
        Category::Division,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::MemoryHeavy => "memory-heavy",
            Category::BranchHeavy => "branch-heavy",
            Category::FpArithmetic => "fp-arithmetic",
            Category::IntegerArithmetic => "integer-arithmetic",
            Category::Division => "division",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CorpusProgram {
    pub name: &'static str,
    pub category: Category,
    pub source: &'static str,
    pub args: &'static [u64],
    pub expected_output: &'static str,
}

impl CorpusProgram {
    pub fn parse(&self) -> Result<Program, IrError> {
        parse_program(self.source)
    }
}

macro_rules! program {
    ($name:literal, $cat:ident, $out:literal) => {
        CorpusProgram {
            name: $name,
            category: Category::$cat,
            source: include_str!(concat!("../corpus/", $name, ".ir")),
            args: &[],
            expected_output: $out,
        }
    };
}

pub const CORPUS: &[CorpusProgram] = &[
    program!("memset", MemoryHeavy, "-6148914691236517206\n"),
    program!("memcpy", MemoryHeavy, "10007\n65032\n"),
    program!(
        "histogram",
        MemoryHeavy,
        "67\n66\n49\n64\n48\n72\n73\n56\n63\n47\n58\n67\n78\n65\n68\n59\n"
    ),
    program!("strscan", BranchHeavy, "61\n2\n3\n17\n3\n"),
    program!("collatz", BranchHeavy, "441\n111\n"),
    program!("blackscholes", FpArithmetic, "838.4101769403669\n"),
    program!("newton", FpArithmetic, "61.6659778114198\n"),
    program!("sum100", IntegerArithmetic, "4950\n"),
    program!("matmul", IntegerArithmetic, "4144\n504\n"),
    program!("xorshift", IntegerArithmetic, "-4442462879985527660\n2920328842641692351\n"),
    program!("narrow", IntegerArithmetic, "-1711\n163132\n163132\n150\n"),
    program!("divchain", Division, "-102903810\n204313038138\n"),
    program!("gcd", Division, "3934\n"),
];

pub fn by_name(name: &str) -> Option<&'static CorpusProgram> {
    CORPUS.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::{execute, ExecConfig, Status};

    #[test]
    fn every_program_parses_and_prints_expected_output() {
        for p in CORPUS {
            let prog = p.parse().unwrap_or_else(|e| panic!("{}: {e}", p.name));
            let r = execute(&prog, p.args, &ExecConfig::default());
            assert_eq!(r.status, Status::Finished, "{}: {:?}", p.name, r.trap);
            assert_eq!(r.output, p.expected_output, "{}", p.name);
        }
    }

    #[test]
    fn at_least_two_per_category() {
        for c in Category::ALL {
            assert!(CORPUS.iter().filter(|p| p.category == c).count() >= 2, "{}", c.name());
        }
        assert!(CORPUS.len() >= 10);
    }
}
