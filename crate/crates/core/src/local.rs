//! Local GPR: an independent exact GP in every leaf of an RPC tree. Each test
//! point is answered by the single leaf it descends to, so predictions are
//! discontinuous across cluster boundaries.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};
use crate::exact::{check_xy, exact_logml_with, exact_train_with, ExactModel, LogMl, PredictiveDistribution};
use crate::kernel::Hyperparameters;
use crate::linalg::JitterPolicy;
use crate::optimizer::{maximize_logml, OptBudget, OptOutcome};
use crate::selection::{build_rpc, RpcTree};
use crate::sod::gather_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalMode {
    /// One θ shared by all leaves.
    #[default]
    Joint,
    /// Each leaf has its own θ.
    Separate,
}

#[derive(Debug, Clone)]
pub struct LocalModel {
    tree: RpcTree,
    leaves: Vec<ExactModel>,
    mode: LocalMode,
}

/// Builds the RPC tree with leaves of at most `m` points and fits every leaf
/// with the shared `hp`.
pub fn local_train(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    m: usize,
    seed: u64,
    hp: &Hyperparameters,
) -> Result<LocalModel> {
    check_xy(x, y, hp)?;
    let tree = build_rpc(x, m, seed)?;
    local_train_on(x, y, tree, std::slice::from_ref(hp), &JitterPolicy::default())
}

/// Fits every leaf of `tree`. `hps` holds either one shared θ (joint mode) or
/// one θ per leaf in leaf order (separate mode).
pub fn local_train_on(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tree: RpcTree,
    hps: &[Hyperparameters],
    jitter: &JitterPolicy,
) -> Result<LocalModel> {
    let k = tree.num_leaves();
    let mode = match hps.len() {
        1 => LocalMode::Joint,
        l if l == k => LocalMode::Separate,
        l => {
            return Err(GprError::DimensionMismatch { expected: k, got: l });
        }
    };
    let mut leaves = Vec::with_capacity(k);
    for (leaf, idx) in tree.leaves().iter().enumerate() {
        let hp = if mode == LocalMode::Joint { &hps[0] } else { &hps[leaf] };
        let (xl, yl) = gather_rows(x, y, idx);
        let model = exact_train_with(xl.view(), yl.view(), hp, jitter).map_err(|e| GprError::LeafFailure {
            leaf,
            source: Box::new(e),
        })?;
        leaves.push(model);
    }
    Ok(LocalModel { tree, leaves, mode })
}

impl LocalModel {
    pub fn tree(&self) -> &RpcTree {
        &self.tree
    }

    pub fn leaf_models(&self) -> &[ExactModel] {
        &self.leaves
    }

    pub fn mode(&self) -> LocalMode {
        self.mode
    }

    pub fn leaf_hyperparameters(&self) -> Vec<&Hyperparameters> {
        self.leaves.iter().map(|l| l.hyperparameters()).collect()
    }

    /// Routes every test point down the tree and predicts with that leaf alone.
    pub fn predict(&self, xstar: ArrayView2<f64>) -> Result<PredictiveDistribution> {
        if xstar.ncols() != self.tree.dim() {
            return Err(GprError::DimensionMismatch {
                expected: self.tree.dim(),
                got: xstar.ncols(),
            });
        }
        let mut routed: Vec<Vec<usize>> = vec![Vec::new(); self.leaves.len()];
        for (i, row) in xstar.rows().into_iter().enumerate() {
            routed[self.tree.assign(row)?].push(i);
        }
        let mut out = PredictiveDistribution::with_capacity(xstar.nrows());
        for (leaf, idx) in routed.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let xs: Array2<f64> = xstar.select(Axis(0), idx);
            let p = self.leaves[leaf].predict(xs.view())?;
            for (j, &i) in idx.iter().enumerate() {
                out.set(i, p.mean[j], p.latent_variance[j], p.observation_variance[j]);
            }
        }
        Ok(out)
    }
}

/// Sum of per-leaf exact log marginal likelihoods under a shared θ, summed in
/// leaf order.
pub fn local_logml_joint(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tree: &RpcTree,
    hp: &Hyperparameters,
) -> Result<LogMl> {
    local_logml_joint_with(x, y, tree, hp, &JitterPolicy::default())
}

pub fn local_logml_joint_with(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tree: &RpcTree,
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<LogMl> {
    check_xy(x, y, hp)?;
    let mut total = LogMl {
        value: 0.0,
        grad: vec![0.0; hp.num_params()],
    };
    for (leaf, idx) in tree.leaves().iter().enumerate() {
        let (xl, yl) = gather_rows(x, y, idx);
        let l = exact_logml_with(xl.view(), yl.view(), hp, jitter).map_err(|e| GprError::LeafFailure {
            leaf,
            source: Box::new(e),
        })?;
        total.accumulate(&l);
    }
    Ok(total)
}

/// Independent per-leaf log marginal likelihoods, one θ per leaf.
pub fn local_logml_separate(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tree: &RpcTree,
    hps: &[Hyperparameters],
) -> Result<Vec<LogMl>> {
    if hps.len() != tree.num_leaves() {
        return Err(GprError::DimensionMismatch {
            expected: tree.num_leaves(),
            got: hps.len(),
        });
    }
    let jitter = JitterPolicy::default();
    tree.leaves()
        .iter()
        .zip(hps)
        .enumerate()
        .map(|(leaf, (idx, hp))| {
            let (xl, yl) = gather_rows(x, y, idx);
            exact_logml_with(xl.view(), yl.view(), hp, &jitter).map_err(|e| GprError::LeafFailure {
                leaf,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Learns one θ for the whole tree against the summed likelihood.
pub fn learn_joint(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tree: &RpcTree,
    init: &Hyperparameters,
    budget: &OptBudget,
) -> Result<OptOutcome> {
    let jitter = JitterPolicy::default();
    maximize_logml(
        |hp: &Hyperparameters| local_logml_joint_with(x, y, tree, hp, &jitter),
        init,
        budget,
    )
}

/// Runs an independent optimization in every leaf, each with the full budget.
pub fn learn_separate(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tree: &RpcTree,
    init: &Hyperparameters,
    budget: &OptBudget,
) -> Result<Vec<OptOutcome>> {
    let jitter = JitterPolicy::default();
    tree.leaves()
        .iter()
        .enumerate()
        .map(|(leaf, idx)| {
            let (xl, yl) = gather_rows(x, y, idx);
            maximize_logml(
                |hp: &Hyperparameters| exact_logml_with(xl.view(), yl.view(), hp, &jitter),
                init,
                budget,
            )
            .map_err(|e| GprError::LeafFailure {
                leaf,
                source: Box::new(e),
            })
        })
        .collect()
}
