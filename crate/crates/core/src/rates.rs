//! Compiled mass-action rate tables shared by the metapopulation simulators.
//!
//! A [`MassActionRates`] is a flat list of reaction terms with constant
//! coefficients. The SMM turns each term into a jump channel, the PDMM uses
//! the adoption terms as ODE drift and the migration terms as jump
//! intensities. Time-varying scenarios rewrite the coefficients in place.

use crate::domain::PopulationState;
use crate::projection::ProjectedModel;

/// `from -> to` inside `subpop` with propensity `rate * N_from`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderTerm {
    pub from: usize,
    pub to: usize,
    pub subpop: usize,
    pub rate: f64,
}

/// `from -> to` inside `subpop` triggered by contacts with status `via`,
/// propensity `rate * N_from * N_via` (self-contacts excluded when
/// `via == from`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactTerm {
    pub from: usize,
    pub to: usize,
    pub via: usize,
    pub subpop: usize,
    pub rate: f64,
}

/// Cross-over adoption in `subpop` through contacts with status `via` in
/// other subpopulations: `N_from^(k) * sum_l coeff_l * N_via^(l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverTerm {
    pub from: usize,
    pub to: usize,
    pub via: usize,
    pub subpop: usize,
    pub partners: Vec<(usize, f64)>,
}

/// Migration of one `status` member from subpopulation `from` to `to`,
/// propensity `rate * N_status^(from)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpTerm {
    pub status: usize,
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MassActionRates {
    pub n_status: usize,
    pub n_subpop: usize,
    pub first_order: Vec<FirstOrderTerm>,
    pub contact: Vec<ContactTerm>,
    pub crossover: Vec<CrossoverTerm>,
    pub jumps: Vec<JumpTerm>,
}

impl FirstOrderTerm {
    #[inline]
    pub fn propensity<T: Copy + Default + Into<f64>>(&self, n: &PopulationState<T>) -> f64 {
        self.rate * n.get(self.from, self.subpop).into()
    }
}

impl ContactTerm {
    #[inline]
    pub fn propensity<T: Copy + Default + Into<f64>>(&self, n: &PopulationState<T>) -> f64 {
        let src: f64 = n.get(self.from, self.subpop).into();
        let mut partners: f64 = n.get(self.via, self.subpop).into();
        if self.via == self.from {
            partners = (partners - 1.0).max(0.0);
        }
        self.rate * src * partners
    }
}

impl CrossoverTerm {
    #[inline]
    pub fn propensity<T: Copy + Default + Into<f64>>(&self, n: &PopulationState<T>) -> f64 {
        let src: f64 = n.get(self.from, self.subpop).into();
        if src == 0.0 {
            return 0.0;
        }
        let partners: f64 = self.partners.iter().map(|&(l, coeff)| coeff * n.get(self.via, l).into()).sum();
        src * partners
    }
}

impl MassActionRates {
    pub fn empty(n_status: usize, n_subpop: usize) -> Self {
        Self {
            n_status,
            n_subpop,
            ..Default::default()
        }
    }

    /// Compiles a projected model, dropping zero-rate terms. Cross-over
    /// terms are included only when the model enables them.
    pub fn from_model(model: &ProjectedModel) -> Self {
        let n_s = model.n_status();
        let m = model.m;
        let mut rates = Self::empty(n_s, m);
        for i in 0..n_s {
            for k in 0..m {
                for l in 0..m {
                    let rate = model.lambda[i][k][l];
                    if k != l && rate > 0.0 {
                        rates.jumps.push(JumpTerm {
                            status: i,
                            from: k,
                            to: l,
                            rate,
                        });
                    }
                }
            }
        }
        for i in 0..n_s {
            for j in 0..n_s {
                for k in 0..m {
                    let rate = model.gamma1[i][j][k];
                    if i != j && rate > 0.0 {
                        rates.first_order.push(FirstOrderTerm {
                            from: i,
                            to: j,
                            subpop: k,
                            rate,
                        });
                    }
                }
            }
        }
        for c in &model.contact {
            for k in 0..m {
                if c.gamma_hat[k] > 0.0 {
                    rates.contact.push(ContactTerm {
                        from: c.from,
                        to: c.to,
                        via: c.via,
                        subpop: k,
                        rate: c.gamma_hat[k],
                    });
                }
            }
            if let (true, Some(coef)) = (model.include_crossover, c.c) {
                for k in 0..m {
                    let partners: Vec<(usize, f64)> = (0..m)
                        .filter(|&l| l != k && model.b[k][l] > 0.0)
                        .map(|l| (l, coef * model.b[k][l]))
                        .collect();
                    if coef > 0.0 && !partners.is_empty() {
                        rates.crossover.push(CrossoverTerm {
                            from: c.from,
                            to: c.to,
                            via: c.via,
                            subpop: k,
                            partners,
                        });
                    }
                }
            }
        }
        rates
    }

    /// Total adoption drift `sum f(N) (E_to - E_from)` written into `out`
    /// (same layout as the state's slice).
    pub fn adoption_drift(&self, n: &PopulationState<f64>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let m = self.n_subpop;
        for t in &self.first_order {
            let f = t.propensity(n);
            out[t.from * m + t.subpop] -= f;
            out[t.to * m + t.subpop] += f;
        }
        for t in &self.contact {
            let f = t.propensity(n);
            out[t.from * m + t.subpop] -= f;
            out[t.to * m + t.subpop] += f;
        }
        for t in &self.crossover {
            let f = t.propensity(n);
            out[t.from * m + t.subpop] -= f;
            out[t.to * m + t.subpop] += f;
        }
    }
}
