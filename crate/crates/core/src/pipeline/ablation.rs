use std::fmt;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::PipelineError;
use crate::encoder::{assignment_counts, build_mask, EncoderConfig};
use crate::graph::RelationKind;

/// Which relations to drop from a model, and whether to use the plain
/// parent/child DOM graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_dom: bool,
    pub no_npr: bool,
    pub no_hori: bool,
    pub no_vert: bool,
    pub sparse_dom: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_dom: false,
        no_npr: false,
        no_hori: false,
        no_vert: false,
        sparse_dom: false,
    };

    /// The five single-change variants.
    pub fn standard() -> [Ablation; 5] {
        let f = Ablation::FULL;
        [
            Ablation { no_dom: true, ..f },
            Ablation {
                sparse_dom: true,
                ..f
            },
            Ablation { no_npr: true, ..f },
            Ablation { no_hori: true, ..f },
            Ablation { no_vert: true, ..f },
        ]
    }

    pub fn is_full(&self) -> bool {
        *self == Ablation::FULL
    }

    pub fn removes(&self, kind: RelationKind) -> bool {
        match kind {
            RelationKind::DomDense => self.no_dom,
            RelationKind::Up | RelationKind::Down => self.no_npr || self.no_vert,
            RelationKind::Left | RelationKind::Right => self.no_npr || self.no_hori,
        }
    }

    /// Reassign the heads of removed relations, keeping the head count.
    ///
    /// A removed position-relation head moves to the surviving relations
    /// of the other direction family when there are any (no horizontal
    /// relations means more vertical heads); otherwise removed heads go
    /// round-robin over every remaining relation in the fixed order DOM,
    /// up, down, left, right.
    pub fn assignment(&self, base: &[RelationKind]) -> Result<Vec<RelationKind>, PipelineError> {
        let remaining: Vec<RelationKind> = RelationKind::ALL
            .into_iter()
            .filter(|k| !self.removes(*k))
            .collect();
        if remaining.is_empty() {
            return Err(PipelineError::InvalidAblation("every relation is removed".into()));
        }
        if self.sparse_dom && self.no_dom {
            return Err(PipelineError::InvalidAblation(
                "the sparse DOM graph is unused when DOM heads are removed".into(),
            ));
        }
        let npr_remaining: Vec<RelationKind> = remaining.iter().copied().filter(|k| k.is_npr()).collect();
        let (mut next_npr, mut next_any) = (0, 0);
        let out = base
            .iter()
            .map(|&kind| {
                if !self.removes(kind) {
                    kind
                } else if kind.is_npr() && !npr_remaining.is_empty() {
                    next_npr += 1;
                    npr_remaining[(next_npr - 1) % npr_remaining.len()]
                } else {
                    next_any += 1;
                    remaining[(next_any - 1) % remaining.len()]
                }
            })
            .collect();
        Ok(out)
    }

    /// `config` with the heads reassigned and the DOM graph switched.
    pub fn apply(&self, config: &EncoderConfig) -> Result<EncoderConfig, PipelineError> {
        let mut out = config.clone();
        out.assignment = self.assignment(&config.assignment)?;
        out.graph.sparse_dom = config.graph.sparse_dom || self.sparse_dom;
        Ok(out)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_full() {
            return f.write_str("full");
        }
        let mut parts = Vec::new();
        if self.no_dom {
            parts.push("w/o DOM");
        }
        if self.sparse_dom {
            parts.push("w/ ORD");
        }
        if self.no_npr {
            parts.push("w/o NPR");
        }
        if self.no_hori {
            parts.push("w/o Hori");
        }
        if self.no_vert {
            parts.push("w/o Vert");
        }
        f.write_str(&parts.join(", "))
    }
}

/// Allowed attention entries of one relation, summed over pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindDensity {
    pub kind: RelationKind,
    pub heads: usize,
    pub allowed: usize,
    pub cells: usize,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub total_heads: usize,
    pub kinds: Vec<KindDensity>,
    /// Every DOM mask allows exactly the diagonal plus parent/child pairs.
    pub dom_parent_child_only: bool,
}

/// Mask sparsity of every relation the configuration assigns heads to.
pub fn mask_report(dataset: &Dataset, config: &EncoderConfig) -> MaskReport {
    let counts = assignment_counts(&config.assignment);
    let mut kinds = Vec::new();
    let mut parent_child_only = true;
    for kind in RelationKind::ALL {
        let heads = counts[kind.code() as usize];
        if heads == 0 {
            continue;
        }
        let (mut allowed, mut cells) = (0, 0);
        for page in &dataset.pages {
            let n = page.bundle.n();
            let mask = build_mask(page.bundle.get(kind), n);
            allowed += mask.allowed_count();
            cells += n * n;
            if kind == RelationKind::DomDense {
                let tree = &page.doc.tree;
                for j in 0..n {
                    for k in 0..n {
                        let linked =
                            j == k || tree.nodes[j].parent == Some(k) || tree.nodes[k].parent == Some(j);
                        if mask.allowed(j, k) != linked {
                            parent_child_only = false;
                        }
                    }
                }
            }
        }
        kinds.push(KindDensity {
            kind,
            heads,
            allowed,
            cells,
            density: if cells == 0 {
                0.0
            } else {
                allowed as f64 / cells as f64
            },
        });
    }
    let has_dom = counts[RelationKind::DomDense.code() as usize] > 0;
    MaskReport {
        total_heads: config.assignment.len(),
        kinds,
        dom_parent_child_only: has_dom && parent_child_only,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::default_assignment;

    fn counts(a: &Ablation) -> [usize; 5] {
        assignment_counts(&a.assignment(&default_assignment(12)).unwrap())
    }

    #[test]
    fn head_counts_per_variant() {
        let f = Ablation::FULL;
        assert_eq!(counts(&f), [4, 2, 2, 2, 2]);
        assert_eq!(counts(&Ablation { no_dom: true, ..f }), [0, 3, 3, 3, 3]);
        assert_eq!(counts(&Ablation { no_npr: true, ..f }), [12, 0, 0, 0, 0]);
        assert_eq!(counts(&Ablation { no_hori: true, ..f }), [4, 4, 4, 0, 0]);
        assert_eq!(counts(&Ablation { no_vert: true, ..f }), [4, 0, 0, 4, 4]);
        assert_eq!(
            counts(&Ablation {
                sparse_dom: true,
                ..f
            }),
            [4, 2, 2, 2, 2]
        );
        for a in Ablation::standard() {
            assert_eq!(a.assignment(&default_assignment(16)).unwrap().len(), 16);
        }
        assert_eq!(
            assignment_counts(
                &Ablation { no_vert: true, ..f }
                    .assignment(&default_assignment(16))
                    .unwrap()
            ),
            [4, 0, 0, 6, 6]
        );
    }

    #[test]
    fn invalid_combinations() {
        let f = Ablation::FULL;
        let all = Ablation {
            no_dom: true,
            no_npr: true,
            ..f
        };
        assert!(matches!(
            all.assignment(&default_assignment(12)),
            Err(PipelineError::InvalidAblation(_))
        ));
        let both = Ablation {
            no_dom: true,
            sparse_dom: true,
            ..f
        };
        assert!(both.assignment(&default_assignment(12)).is_err());
    }

    #[test]
    fn names() {
        let names: Vec<String> = Ablation::standard().iter().map(|a| a.to_string()).collect();
        assert_eq!(names, ["w/o DOM", "w/ ORD", "w/o NPR", "w/o Hori", "w/o Vert"]);
        assert_eq!(Ablation::FULL.to_string(), "full");
    }
}
