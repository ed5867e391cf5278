use crate::balance::{balance_gram, balance_weights, solve_balance, BalanceConfig, BalanceWeights};
use crate::cfd::GroupSpec;
use crate::error::{Error, Result};
use crate::estimators::{contrast, estimate, ipw_hajek_weights, wald, Dataset, Estimand, Estimate};

/// A deterministic map from (rows, seed) to a point estimate, recomputing
/// any weights it needs.
pub trait EstimatorPipeline: Sync {
    fn label(&self) -> String;

    fn estimate(&self, data: &Dataset, seed: u64) -> Result<f64>;

    /// Estimate on the multiset in which row i of `data` appears `counts[i]`
    /// times. The default materializes the duplicated rows.
    fn estimate_resample(&self, data: &Dataset, counts: &[usize], seed: u64) -> Result<f64> {
        if counts.len() != data.n() {
            return Err(Error::Shape(format!("{} multiplicities for {} rows", counts.len(), data.n())));
        }
        let idx: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect();
        self.estimate(&data.select(&idx)?, seed)
    }
}

/// Weighting estimator with CFD balancing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CfdPipeline {
    pub config: BalanceConfig,
    pub estimand: Estimand,
}

impl CfdPipeline {
    pub fn new(config: BalanceConfig, estimand: Estimand) -> Self {
        Self { config, estimand }
    }

    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<(BalanceWeights, Estimate)> {
        let config = BalanceConfig { seed, ..self.config.clone() };
        let bw = balance_weights(data.x(), data.z(), &config)?;
        let est = estimate(data, &bw.w, self.estimand)?;
        Ok((bw, est))
    }
}

impl EstimatorPipeline for CfdPipeline {
    fn label(&self) -> String {
        self.config.density.label().to_string()
    }

    fn estimate(&self, data: &Dataset, seed: u64) -> Result<f64> {
        Ok(self.fit(data, seed)?.1.value)
    }

    /// Solves the balancing program on the distinct rows with their
    /// multiplicities, which gives the same estimate as the duplicated sample
    /// at a fraction of the cost.
    fn estimate_resample(&self, data: &Dataset, counts: &[usize], seed: u64) -> Result<f64> {
        if counts.len() != data.n() {
            return Err(Error::Shape(format!("{} multiplicities for {} rows", counts.len(), data.n())));
        }
        let rows: Vec<usize> = (0..data.n()).filter(|&i| counts[i] > 0).collect();
        let c: Vec<usize> = rows.iter().map(|&i| counts[i]).collect();
        let sub = data.select(&rows)?;
        let groups: &GroupSpec = sub.groups();
        let total: usize = c.iter().sum();
        self.config.lambda.validate()?;
        let k = balance_gram(sub.x(), &self.config.density, Some(&c), seed)?;
        let (w, _) = solve_balance(
            &k.k,
            groups,
            Some(&c),
            self.config.mode,
            self.config.lambda.value(total),
            &self.config.solver,
            None,
        )?;
        let num = contrast(|j| sub.y()[j], sub.z(), &w);
        match self.estimand {
            Estimand::Ate => Ok(num),
            Estimand::Late => {
                let a = sub
                    .a()
                    .ok_or_else(|| Error::Parameter("LATE requires the treatment-receipt column".into()))?;
                let den = contrast(|j| a[j] as f64, sub.z(), &w);
                Ok(wald(num, den)?.value)
            }
        }
    }
}

/// Weighting estimator with Hájek-normalized logistic IPW weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpwPipeline {
    pub estimand: Estimand,
}

impl EstimatorPipeline for IpwPipeline {
    fn label(&self) -> String {
        "ipw".into()
    }

    fn estimate(&self, data: &Dataset, _seed: u64) -> Result<f64> {
        let w = ipw_hajek_weights(data.x(), data.z())?;
        Ok(estimate(data, &w, self.estimand)?.value)
    }
}

/// Unweighted difference in means (or Wald ratio).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPipeline {
    pub estimand: Estimand,
}

impl EstimatorPipeline for UniformPipeline {
    fn label(&self) -> String {
        "uniform".into()
    }

    fn estimate(&self, data: &Dataset, _seed: u64) -> Result<f64> {
        Ok(estimate(data, &vec![1.0; data.n()], self.estimand)?.value)
    }
}
