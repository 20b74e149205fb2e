//! The network as a simulator policy.

use rand_chacha::ChaCha8Rng;
use zsim_core::simcore::{Policy, PolicyInput, PolicyOutput};
use zsim_nn::{sample_actions, Model, Scalar};

use crate::seq::{stack_rows, ObsRow};

/// One immutable parameter snapshot. Only rows with valid observations are
/// forwarded; the rest get the zero action, log-probability 0 and value 0.
pub struct ModelPolicy<'a, R> {
    pub model: &'a Model,
    pub params: &'a [R],
    pub version: u64,
    /// Take the most likely bin instead of sampling.
    pub greedy: bool,
}

impl<R: Scalar> Policy<R> for ModelPolicy<'_, R> {
    fn act(
        &self,
        input: &PolicyInput<'_, R>,
        rngs: &mut [ChaCha8Rng],
    ) -> zsim_core::Result<PolicyOutput<R>> {
        let obs = input.obs;
        let n = obs.batch();
        let mut out = PolicyOutput::deterministic(vec![input.env.config.actions.zero_action(); n]);
        let live: Vec<usize> = (0..n).filter(|&b| obs.policy.row_valid[b] != 0).collect();
        if live.is_empty() {
            return Ok(out);
        }
        let rows: Vec<ObsRow<R>> = live.iter().map(|&b| ObsRow::pack(obs, b)).collect();
        let refs: Vec<&ObsRow<R>> = rows.iter().collect();
        let (fwd, _) = self
            .model
            .forward(self.params, &stack_rows(&refs))
            .map_err(|e| zsim_core::Error::Policy(e.to_string()))?;
        let bins = [self.model.config.accel_bins, self.model.config.steer_bins];
        let table = input.env.config.actions.sizes();
        if bins != table {
            return Err(zsim_core::Error::Policy(format!(
                "model heads {bins:?} do not match the action table {table:?}"
            )));
        }
        for (i, &b) in live.iter().enumerate() {
            let s = sample_actions(
                &fwd.logits_accel[i * bins[0]..(i + 1) * bins[0]],
                &fwd.logits_steer[i * bins[1]..(i + 1) * bins[1]],
                bins,
                std::slice::from_mut(&mut rngs[b]),
                self.greedy,
            );
            out.actions[b] = s.actions[0];
            out.log_probs[b] = s.log_probs[0];
            out.values[b] = fwd.value[i];
        }
        Ok(out)
    }

    fn version(&self) -> u64 {
        self.version
    }
}
