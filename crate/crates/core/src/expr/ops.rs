use std::fmt;

/// The eleven operator kinds. Discriminants are the 1-based kind indices.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    /// `c*u_1 + u_2`
    Add = 1,
    /// `c*u_1*u_2`
    Mul = 2,
    /// `u^-1`, input bounded away from zero
    Inv = 3,
    Sin = 4,
    Cos = 5,
    /// `exp(u)`, input bounded by the threshold
    Exp = 6,
    /// `pow(u, c)` with `c > 1`, input bounded by the threshold
    Pow = 7,
    /// `pow(u, c)` with `0 < c < 1`, non-negative input
    #[serde(rename = "fpow")]
    FracPow = 8,
    /// `log(u)`, input above the threshold
    Log = 9,
    /// `u + c`
    #[serde(rename = "addc")]
    AddConst = 10,
    /// `u * c`
    #[serde(rename = "mulc")]
    MulConst = 11,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::Add,
        OpKind::Mul,
        OpKind::Inv,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Exp,
        OpKind::Pow,
        OpKind::FracPow,
        OpKind::Log,
        OpKind::AddConst,
        OpKind::MulConst,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OpKind> {
        OpKind::ALL.get(i.checked_sub(1)?).copied()
    }

    /// Nominal arity: 2 for `Add`/`Mul` (which may hold more operands once
    /// flattened), 1 otherwise.
    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Mul => 2,
            _ => 1,
        }
    }

    /// Constants in the closed form. `Add` holds one scale per term instead;
    /// this returns the binary count.
    pub fn const_count(self) -> usize {
        match self {
            OpKind::Add => 2,
            OpKind::Mul | OpKind::Pow | OpKind::FracPow | OpKind::AddConst | OpKind::MulConst => 1,
            _ => 0,
        }
    }

    pub fn is_binary(self) -> bool {
        self.arity() == 2
    }

    /// Short label used in matrix files and CLI output.
    pub fn label(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Inv => "inv",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Exp => "exp",
            OpKind::Pow => "pow",
            OpKind::FracPow => "fpow",
            OpKind::Log => "log",
            OpKind::AddConst => "addc",
            OpKind::MulConst => "mulc",
        }
    }

    pub fn from_label(s: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.label() == s)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_one_based_and_dense() {
        for (i, k) in OpKind::ALL.iter().enumerate() {
            assert_eq!(k.index(), i + 1);
            assert_eq!(OpKind::from_index(i + 1), Some(*k));
            assert_eq!(OpKind::from_label(k.label()), Some(*k));
        }
        assert_eq!(OpKind::from_index(0), None);
        assert_eq!(OpKind::from_index(12), None);
    }

    #[test]
    fn arity_table() {
        let binary: Vec<_> = OpKind::ALL.iter().filter(|k| k.is_binary()).collect();
        assert_eq!(binary, [&OpKind::Add, &OpKind::Mul]);
    }
}
