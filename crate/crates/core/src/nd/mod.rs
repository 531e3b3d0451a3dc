//! Dense numeric kernel.

pub mod activation;
pub mod jet;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod rng;

pub use activation::{activation_eval, Activation, ActivationKind};
pub use jet::Jet2;
pub use linalg::{cholesky_psd, sqrtm_psd, CholeskyFactor, DenseMatrix};
pub use mlp::{mlp_eval, mlp_input_jet, mlp_param_grad, BatchJets, JetTape, Mlp, MlpParams};
pub use optim::{adam_step, lbfgs_minimize, Adam, LbfgsOptions, LbfgsReport};
