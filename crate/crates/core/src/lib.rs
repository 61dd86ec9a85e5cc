//! Architecture pruning by two-temperature relaxation of binary masks.
//!
//! A parent network `θ` carries one real logit `w_i` per connection. Training
//! uses the tight relaxation `σ(t_l w)` in the forward pass and the looser
//! slope `t_s σ'(t_s w)` for the mask gradient; the final sub-architecture is
//! `1[w > 0]`.
//!
//! - [`relaxation`]: sigmoid relaxation, hardening, the two-temperature
//!   gradient and the convergence-bound constants.
//! - [`model`]: masked logistic regression and small ReLU MLPs with analytic
//!   gradients in `θ` and `v`.
//! - [`optimizer`]: the joint `(w, θ)` training loop with sparsity freeze.
//! - [`bound`]: empirical check of the convergence bound.
//! - [`baselines`]: random pruning, iterative magnitude pruning, layer-wise
//!   reshuffling and the mask file format.
//! - [`transfer`]: masked fine-tuning on a new task and seed-averaged grids.
//! - [`data`]: MNIST IDX and CIFAR binary loaders, task construction,
//!   synthetic data.
//! - [`harness`]: the experiment commands behind the `archprune` binary.

pub mod baselines;
pub mod bound;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod relaxation;
pub mod transfer;

pub use error::{Error, Result};
pub use model::{MaskMode, MaskedMlp, OutputHead};
pub use optimizer::{run_ap, ApTrainer, TwoTempConfig};
pub use relaxation::{harden_mask, relax_mask, two_temp_grad, HardMask, MaskLogits, TempPair};
