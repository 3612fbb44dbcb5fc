//! Relational constraints over named numeric features.
//!
//! Schema (TOML):
//!
//! ```toml
//! [[feature]]
//! name = "loan_amount"
//! lower = 1.0
//! upper = 40.0
//!
//! [[constraint]]
//! kind = "linear_sum"          # sum_j w_j x_j - constant
//! name = "accounts"
//! terms = [{ feature = "total_acc", weight = 1.0 }, { feature = "open_acc", weight = -1.0 }]
//! constant = 0.0
//!
//! [[constraint]]
//! kind = "product_ratio"       # x_target - x_left * x_right
//! target = "revol_bal"
//! left = "revol_util"
//! right = "revol_limit"
//!
//! [[constraint]]
//! kind = "monotone_pair"       # max(0, x_lesser - x_greater)
//! lesser = "loan_amount"
//! greater = "annual_income"
//!
//! [[constraint]]
//! kind = "bound"               # max(0, x - upper) + max(0, lower - x)
//! feature = "revol_util"
//! upper = 1.0
//! ```
//!
//! The potential is `phi(x) = sum_r c_r(x)^2`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::guidance::ConstraintPotential;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub feature: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintDef {
    LinearSum {
        name: String,
        terms: Vec<Term>,
        #[serde(default)]
        constant: f64,
    },
    ProductRatio {
        name: String,
        target: String,
        left: String,
        right: String,
    },
    MonotonePair {
        name: String,
        lesser: String,
        greater: String,
    },
    Bound {
        name: String,
        feature: String,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
}

impl ConstraintDef {
    pub fn name(&self) -> &str {
        match self {
            ConstraintDef::LinearSum { name, .. }
            | ConstraintDef::ProductRatio { name, .. }
            | ConstraintDef::MonotonePair { name, .. }
            | ConstraintDef::Bound { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(rename = "feature")]
    pub features: Vec<FeatureDef>,
    #[serde(rename = "constraint", default)]
    pub constraints: Vec<ConstraintDef>,
}

/// Constraint term resolved to feature indices.
#[derive(Debug, Clone, PartialEq)]
enum Resolved {
    LinearSum { terms: Vec<(usize, f64)>, constant: f64 },
    ProductRatio { target: usize, left: usize, right: usize },
    MonotonePair { lesser: usize, greater: usize },
    Bound { feature: usize, lower: f64, upper: f64 },
}

impl Resolved {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Resolved::LinearSum { ref terms, constant } => {
                terms.iter().map(|&(j, w)| w * x[j]).sum::<f64>() - constant
            }
            Resolved::ProductRatio { target, left, right } => x[target] - x[left] * x[right],
            Resolved::MonotonePair { lesser, greater } => (x[lesser] - x[greater]).max(0.0),
            Resolved::Bound { feature, lower, upper } => {
                (x[feature] - upper).max(0.0) + (lower - x[feature]).max(0.0)
            }
        }
    }

    /// Adds `scale * grad c(x)` into `out`.
    fn add_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match *self {
            Resolved::LinearSum { ref terms, .. } => {
                for &(j, w) in terms {
                    out[j] += scale * w;
                }
            }
            Resolved::ProductRatio { target, left, right } => {
                out[target] += scale;
                out[left] -= scale * x[right];
                out[right] -= scale * x[left];
            }
            Resolved::MonotonePair { lesser, greater } => {
                if x[lesser] > x[greater] {
                    out[lesser] += scale;
                    out[greater] -= scale;
                }
            }
            Resolved::Bound { feature, lower, upper } => {
                if x[feature] > upper {
                    out[feature] += scale;
                } else if x[feature] < lower {
                    out[feature] -= scale;
                }
            }
        }
    }
}

/// Validated constraint set over a fixed feature list.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalConstraintSet {
    pub schema: Schema,
    resolved: Vec<Resolved>,
}

/// Built-in 12-feature credit-style schema.
pub const CREDIT_SCHEMA: &str = include_str!("../../data/credit_schema.toml");

impl RelationalConstraintSet {
    pub fn from_schema(schema: Schema) -> Result<Self> {
        if schema.features.is_empty() {
            return Err(Error::Validation("schema has no features".into()));
        }
        for (i, f) in schema.features.iter().enumerate() {
            if !(f.lower < f.upper) {
                return Err(Error::Validation(format!("feature {} has empty bounds", f.name)));
            }
            if schema.features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Validation(format!("duplicate feature {}", f.name)));
            }
        }
        let idx = |name: &str| -> Result<usize> {
            schema
                .features
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| Error::Validation(format!("constraint references unknown feature {name}")))
        };
        let resolved = schema
            .constraints
            .iter()
            .map(|c| {
                Ok(match c {
                    ConstraintDef::LinearSum { terms, constant, .. } => Resolved::LinearSum {
                        terms: terms.iter().map(|t| Ok((idx(&t.feature)?, t.weight))).collect::<Result<_>>()?,
                        constant: *constant,
                    },
                    ConstraintDef::ProductRatio { target, left, right, .. } => Resolved::ProductRatio {
                        target: idx(target)?,
                        left: idx(left)?,
                        right: idx(right)?,
                    },
                    ConstraintDef::MonotonePair { lesser, greater, .. } => Resolved::MonotonePair {
                        lesser: idx(lesser)?,
                        greater: idx(greater)?,
                    },
                    ConstraintDef::Bound { feature, lower, upper, .. } => Resolved::Bound {
                        feature: idx(feature)?,
                        lower: lower.unwrap_or(f64::NEG_INFINITY),
                        upper: upper.unwrap_or(f64::INFINITY),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { schema, resolved })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_schema(toml::from_str(text)?)
    }

    pub fn credit() -> Self {
        Self::from_toml(CREDIT_SCHEMA).expect("built-in schema is valid")
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.schema.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.schema.features.iter().position(|f| f.name == name)
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        self.schema.features.iter().map(|f| f.lower).collect()
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.schema.features.iter().map(|f| f.upper).collect()
    }

    pub fn constraint_count(&self) -> usize {
        self.resolved.len()
    }

    /// `phi`, its gradient and the per-constraint squared violations.
    pub fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        ensure_dim("feature vector", self.schema.features.len(), x.len())?;
        let mut grad = vec![0.0; x.len()];
        let mut breakdown = Vec::with_capacity(self.resolved.len());
        for c in &self.resolved {
            let v = c.value(x);
            breakdown.push(v * v);
            if v != 0.0 {
                c.add_gradient(x, 2.0 * v, &mut grad);
            }
        }
        Ok((breakdown.iter().sum(), grad, breakdown))
    }
}

impl ConstraintPotential for RelationalConstraintSet {
    fn dim(&self) -> usize {
        self.schema.features.len()
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (v, g, _) = self.evaluate(x).expect("feature vector has schema width");
        (v, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_feature(constraints: &str) -> RelationalConstraintSet {
        let text = format!(
            "[[feature]]\nname = \"a\"\nlower = -10.0\nupper = 10.0\n\
             [[feature]]\nname = \"b\"\nlower = -10.0\nupper = 10.0\n{constraints}"
        );
        RelationalConstraintSet::from_toml(&text).unwrap()
    }

    #[test]
    fn linear_sum_example() {
        let set = two_feature(
            "[[constraint]]\nkind = \"linear_sum\"\nname = \"s\"\nconstant = 1.0\n\
             terms = [{ feature = \"a\", weight = 1.0 }, { feature = \"b\", weight = 1.0 }]\n",
        );
        let (phi, grad, parts) = set.evaluate(&[1.0, 1.0]).unwrap();
        assert_eq!(phi, 1.0);
        assert_eq!(grad, vec![2.0, 2.0]);
        assert_eq!(parts, vec![1.0]);
    }

    #[test]
    fn satisfied_constraints_vanish() {
        let set = RelationalConstraintSet::credit();
        assert_eq!(set.schema.features.len(), 12);
        assert_eq!(set.constraint_count(), 6);
        let x = crate::adversarial::feasible_example(&set);
        let (phi, grad, _) = set.evaluate(&x).unwrap();
        assert_eq!(phi, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn unknown_feature_rejected() {
        let text = "[[feature]]\nname = \"a\"\nlower = 0.0\nupper = 1.0\n\
                    [[constraint]]\nkind = \"bound\"\nname = \"z\"\nfeature = \"zz\"\nupper = 1.0\n";
        assert!(matches!(RelationalConstraintSet::from_toml(text), Err(Error::Validation(_))));
    }

    #[test]
    fn wrong_width_rejected() {
        let set = RelationalConstraintSet::credit();
        assert!(matches!(set.evaluate(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn monotone_and_bound_terms() {
        let set = two_feature(
            "[[constraint]]\nkind = \"monotone_pair\"\nname = \"m\"\nlesser = \"a\"\ngreater = \"b\"\n\
             [[constraint]]\nkind = \"bound\"\nname = \"u\"\nfeature = \"b\"\nlower = 0.0\nupper = 1.0\n",
        );
        let (phi, grad, parts) = set.evaluate(&[3.0, 2.0]).unwrap();
        assert_eq!(parts, vec![1.0, 1.0]);
        assert_eq!(phi, 2.0);
        assert_eq!(grad, vec![2.0, -2.0 + 2.0]);
        let (phi, _, _) = set.evaluate(&[-1.0, 0.5]).unwrap();
        assert_eq!(phi, 0.0);
    }
}
