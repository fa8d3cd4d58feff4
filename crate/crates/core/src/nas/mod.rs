//! Architecture search: the latency-aware single-path search, the softmax
//! baselines, random search, and the studies built on them.

pub mod ablation;
pub mod bilevel;
pub mod checkpoint;
pub mod config;
pub mod logs;
pub mod optim;
pub mod random;
pub mod search;
pub mod train;
pub mod variance;

pub use ablation::{shared_subset_ablation, AblationRow};
pub use bilevel::{search_bilevel, BilevelModel, BilevelOutcome, MultiPathNet, SoftmaxEncoding};
pub use checkpoint::Checkpoint;
pub use config::{SearchConfig, TrainConfig, Variant};
pub use random::{enumerate_runtimes, random_search, runtime_percentile, sample_architecture, sample_in_window, RandomSearchConfig, RandomSearchReport, Summary};
pub use search::{latency_loss, loss_value, search, PhaseAudit, RunOptions, SearchOutcome, SearchReport, StepLog};
pub use train::{evaluate, train_classifier, train_fixed, TrainReport};
pub use variance::{variance_study, VarianceConfig, VarianceReport};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latency::RuntimeModel;
use crate::space::{Architecture, SearchSpaceConfig};

/// Result of any gradient-based search variant.
pub enum SearchRun {
    Threshold(SearchOutcome<f64>),
    Bilevel(BilevelOutcome<f64>),
}

impl SearchRun {
    pub fn report(&self) -> &SearchReport {
        match self {
            SearchRun::Threshold(o) => &o.report,
            SearchRun::Bilevel(o) => &o.report,
        }
    }

    pub fn into_report(self) -> SearchReport {
        match self {
            SearchRun::Threshold(o) => o.report,
            SearchRun::Bilevel(o) => o.report,
        }
    }

    pub fn checkpoint(&self, cfg: &SearchConfig) -> Checkpoint {
        match self {
            SearchRun::Threshold(o) => search::supernet_checkpoint(&o.supernet, cfg, o.report.batches),
            SearchRun::Bilevel(o) => o.model.checkpoint(cfg),
        }
    }
}

/// Dispatches on `cfg.variant`.
pub fn run_search(
    cfg: &SearchConfig,
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    opts: &RunOptions,
) -> Result<SearchRun> {
    match cfg.variant {
        Variant::SingleSigmoid | Variant::SingleSte => Ok(SearchRun::Threshold(search(cfg, space, data, model, opts)?)),
        Variant::SingleSoftmax | Variant::MultiPathSoftmax => {
            Ok(SearchRun::Bilevel(search_bilevel(cfg, space, data, model, opts)?))
        }
        Variant::Random => Err(Error::Config("the random variant has no search loop; use random search".into())),
    }
}

/// Decoded architecture of a checkpoint written by any search variant.
pub fn derive(ck: &Checkpoint) -> Result<Architecture> {
    let kind = ck.meta.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    let space: SearchSpaceConfig = serde_json::from_value(
        ck.meta
            .get("space")
            .cloned()
            .ok_or_else(|| Error::Config("checkpoint has no search space".into()))?,
    )?;
    match kind {
        "supernet" => Ok(search::load_supernet(ck)?.decode()),
        "single_softmax" => {
            let mut enc = SoftmaxEncoding::<f64>::new(space.num_layers());
            ck.restore_store("arch.", &mut enc.logits)?;
            Ok(enc.decode(&space.resolve()?))
        }
        "multi_path_softmax" => {
            let mut net = MultiPathNet::<f64>::new(&space, 0)?;
            ck.restore_store("arch.", &mut net.arch)?;
            Ok(net.decode())
        }
        other => Err(Error::Config(format!("unknown checkpoint kind {other:?}"))),
    }
}
