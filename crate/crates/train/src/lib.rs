//! Behavior-cloning pre-training and PPO/V-trace fine-tuning for the zsim
//! policy, with replay tables and gradient averaging across learner workers.

pub mod bc;
pub mod checkpointing;
pub mod comm;
pub mod config;
pub mod curves;
pub mod error;
pub mod losses;
pub mod optim;
pub mod policy;
pub mod returns;
pub mod rl;
pub mod seq;

pub use bc::{expert_samples, run_bc, BcEpoch, BcOutcome};
pub use comm::{allreduce_mean, ChannelMember, Collective, Solo, TcpMember};
pub use config::{BcConfig, RlConfig, TrainConfig};
pub use curves::{read_curves_csv, write_curves_csv, CurvePoint, CURVES_CSV_HEADER};
pub use error::{Result, TrainError};
pub use losses::{
    bc_loss, ppo_loss, ppo_step, ppo_targets, BcSample, LossStats, PpoConfig, PpoTargets,
};
pub use optim::{Adam, AdamConfig};
pub use policy::ModelPolicy;
pub use returns::{discounted_return, vtrace, VtraceOut, VtraceParams};
pub use rl::{evaluate_params, run_rl, RlOutcome};
pub use seq::{cut_episode, stack_rows, ObsRow, ReplayTable, TransitionSequence, SEQ_LEN};

pub type BcSample32 = BcSample<f32>;
pub type BcSample64 = BcSample<f64>;
pub type TransitionSequence32 = TransitionSequence<f32>;
pub type TransitionSequence64 = TransitionSequence<f64>;
