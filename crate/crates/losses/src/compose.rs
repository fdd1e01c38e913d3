//! Weighted sums of loss parts.
//!
//! Auxiliary parts are optional: a part that is `None`, or whose weight is
//! zero, is left out of the sum entirely rather than multiplied by zero, so
//! switching a term off cannot change the remaining arithmetic.

use fedgtg_autograd::Var;

use crate::HyperParams;

fn weighted<'g>(base: Var<'g>, terms: &[(Option<Var<'g>>, f64)]) -> Var<'g> {
    terms.iter().fold(base, |acc, (part, w)| match part {
        Some(p) if *w != 0.0 => acc + p.scale(*w),
        _ => acc,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorParts<'g> {
    pub ce: Var<'g>,
    pub ie: Option<Var<'g>>,
    pub batch: Option<Var<'g>>,
    pub smooth: Option<Var<'g>>,
}

/// `L_CE + l_ie * L_IE + l_batch * L_batch + l_smooth * L_smooth`.
pub fn compose_generator_objective<'g>(parts: &GeneratorParts<'g>, hp: &HyperParams) -> Var<'g> {
    weighted(
        parts.ce,
        &[
            (parts.ie, hp.lambda_ie),
            (parts.batch, hp.lambda_batch),
            (parts.smooth, hp.lambda_smooth),
        ],
    )
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureGeneratorParts<'g> {
    pub ce: Var<'g>,
    pub ie: Option<Var<'g>>,
}

/// `L_FCE + l_fie * L_FIE`.
pub fn compose_feature_generator_objective<'g>(parts: &FeatureGeneratorParts<'g>, hp: &HyperParams) -> Var<'g> {
    weighted(parts.ce, &[(parts.ie, hp.lambda_fie)])
}

#[derive(Debug, Clone, Copy)]
pub struct ClientParts<'g> {
    pub ce: Var<'g>,
    pub logits: Option<Var<'g>>,
    pub ft: Option<Var<'g>>,
    pub efm: Option<Var<'g>>,
}

/// `L_CE + l_logits * L_logits + l_ft * L_FT + l_efm * L_EFM`.
pub fn compose_client_objective<'g>(parts: &ClientParts<'g>, hp: &HyperParams) -> Var<'g> {
    weighted(
        parts.ce,
        &[
            (parts.logits, hp.lambda_logits),
            (parts.ft, hp.lambda_ft),
            (parts.efm, hp.lambda_efm),
        ],
    )
}

#[cfg(test)]
mod tests {
    use fedgtg_autograd::Graph;

    use super::*;

    fn zeroed() -> HyperParams {
        HyperParams {
            lambda_current: 0.0,
            lambda_ie: 0.0,
            lambda_batch: 0.0,
            lambda_smooth: 0.0,
            lambda_fie: 0.0,
            lambda_ft: 0.0,
            lambda_logits: 0.0,
            lambda_efm: 0.0,
            lambda_e: 0.0,
            eta: 0.0,
        }
    }

    #[test]
    fn generator_objective_sums_weighted_parts() {
        let g = Graph::new();
        let parts = GeneratorParts {
            ce: g.scalar(0.7),
            ie: Some(g.scalar(-0.6)),
            batch: Some(g.scalar(0.25)),
            smooth: Some(g.scalar(3.0)),
        };
        let full = compose_generator_objective(&parts, &HyperParams::default()).item();
        assert!((full - (0.7 - 0.6 + 0.25 + 3.0)).abs() < 1e-15);
        let only_batch = compose_generator_objective(
            &GeneratorParts {
                ce: g.scalar(0.0),
                ..parts
            },
            &HyperParams {
                lambda_batch: 1.0,
                ..zeroed()
            },
        );
        assert_eq!(only_batch.item(), 0.25);
        let nothing = GeneratorParts {
            ce: g.scalar(0.0),
            ie: Some(g.scalar(0.0)),
            batch: Some(g.scalar(0.0)),
            smooth: Some(g.scalar(0.0)),
        };
        assert_eq!(compose_generator_objective(&nothing, &HyperParams::default()).item(), 0.0);
    }

    #[test]
    fn feature_generator_objective_sums_weighted_parts() {
        let g = Graph::new();
        let parts = FeatureGeneratorParts {
            ce: g.scalar(1.25),
            ie: Some(g.scalar(-0.5)),
        };
        assert_eq!(compose_feature_generator_objective(&parts, &HyperParams::default()).item(), 0.75);
        assert_eq!(compose_feature_generator_objective(&parts, &zeroed()).item(), 1.25);
        let nothing = FeatureGeneratorParts {
            ce: g.scalar(0.0),
            ie: None,
        };
        assert_eq!(compose_feature_generator_objective(&nothing, &HyperParams::default()).item(), 0.0);
    }

    #[test]
    fn client_objective_uses_default_weights() {
        let g = Graph::new();
        let parts = ClientParts {
            ce: g.scalar(0.5),
            logits: Some(g.scalar(2.0)),
            ft: Some(g.scalar(0.75)),
            efm: Some(g.scalar(40.0)),
        };
        let v = compose_client_objective(&parts, &HyperParams::default()).item();
        assert!((v - (0.5 + 0.1 * 2.0 + 0.75 + 0.005 * 40.0)).abs() < 1e-12);
        let only_efm = compose_client_objective(
            &ClientParts {
                ce: g.scalar(0.0),
                ..parts
            },
            &HyperParams {
                lambda_efm: 1.0,
                eta: 0.1,
                ..zeroed()
            },
        );
        assert_eq!(only_efm.item(), 40.0);
        let nothing = ClientParts {
            ce: g.scalar(0.0),
            logits: None,
            ft: None,
            efm: None,
        };
        assert_eq!(compose_client_objective(&nothing, &HyperParams::default()).item(), 0.0);
    }

    #[test]
    fn zero_weight_terms_leave_the_tape_untouched() {
        let g = Graph::new();
        let p = g.param(ndarray::arr0(1.0).into_dyn());
        let nan = p.scale(f64::NAN);
        let parts = ClientParts {
            ce: p.square(),
            logits: Some(nan),
            ft: None,
            efm: None,
        };
        let loss = compose_client_objective(
            &parts,
            &HyperParams {
                lambda_logits: 0.0,
                ..Default::default()
            },
        );
        assert_eq!(loss.item(), 1.0);
        assert_eq!(g.backward(loss).get(p).unwrap()[[]], 2.0);
    }
}
