//! The encoder with factorized policy heads and a value head.
//!
//! Agent tokens (plus an always-present learned null token) form the latent
//! set. They self-attend, then cross-attend each context modality in the
//! configured order. The mean over latent tokens, layer-normalized, is the
//! shared embedding; the policy trunk maps it to one logit vector per action
//! dimension and the value trunk combines it with the embedded value-only
//! features. Only valid tokens are packed, so invalid slots never touch the
//! arithmetic.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zsim_core::simcore::{ObservationBatch, ACTIVE_DIM, AGENT_DIM, ROAD_DIM, ROUTE_DIM, VALUE_DIM};

use crate::error::{NnError, Result};
use crate::layers::{
    relu, relu_backward, AttnBlock, AttnBlockCache, Dense, LayerNorm, LnCache, Ragged, ResMlp,
    ResMlpCache,
};
use crate::layout::{Init, ParamLayout};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    RoadNetwork,
    Route,
    ActiveAgent,
}

impl Modality {
    pub fn feature_dim(self) -> usize {
        match self {
            Modality::RoadNetwork => ROAD_DIM,
            Modality::Route => ROUTE_DIM,
            Modality::ActiveAgent => ACTIVE_DIM,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Modality::RoadNetwork => "road",
            Modality::Route => "route",
            Modality::ActiveAgent => "active",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent token width.
    pub width: usize,
    pub heads: usize,
    /// Width of embedded context tokens.
    pub token_width: usize,
    /// Residual blocks in each of the policy and value trunks.
    pub trunk_depth: usize,
    pub value_embed: usize,
    pub accel_bins: usize,
    pub steer_bins: usize,
    pub cross_order: Vec<Modality>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// About 0.5M parameters.
    pub fn desk() -> Self {
        Self {
            width: 128,
            heads: 2,
            token_width: 64,
            trunk_depth: 2,
            value_embed: 32,
            accel_bins: 6,
            steer_bins: 5,
            cross_order: vec![
                Modality::RoadNetwork,
                Modality::Route,
                Modality::ActiveAgent,
            ],
        }
    }

    /// About 2.5M parameters.
    pub fn medium() -> Self {
        Self {
            width: 256,
            heads: 4,
            token_width: 128,
            trunk_depth: 4,
            ..Self::desk()
        }
    }

    /// About 25M parameters.
    pub fn large() -> Self {
        Self {
            width: 768,
            heads: 8,
            token_width: 256,
            trunk_depth: 6,
            value_embed: 64,
            ..Self::desk()
        }
    }

    /// Tiny width for gradient checks.
    pub fn toy() -> Self {
        Self {
            width: 16,
            heads: 2,
            token_width: 8,
            trunk_depth: 1,
            value_embed: 4,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "medium" => Some(Self::medium()),
            "large" => Some(Self::large()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(NnError::Config(m));
        if self.width == 0 || self.token_width == 0 || self.value_embed == 0 {
            return err("widths must be positive".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return err(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if self.trunk_depth == 0 {
            return err("trunk depth must be at least 1".into());
        }
        if self.accel_bins == 0 || self.steer_bins == 0 {
            return err("action heads need at least one bin".into());
        }
        let mut order = self.cross_order.clone();
        order.sort_by_key(|m| *m as u8);
        order.dedup();
        if order.len() != 3 || self.cross_order.len() != 3 {
            return err("cross_order must list each modality exactly once".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

// Fixed input scaling so every feature is roughly unit-sized.
const ACTIVE_SCALE: [f64; ACTIVE_DIM] = [0.1, 2.0, 1.0 / 60.0, 1.0, 1.0, 1.0, 1.0, 1.0 / 60.0, 0.1];
const AGENT_SCALE: [f64; AGENT_DIM] = [0.05, 0.05, 1.0, 1.0, 0.1, 0.05];
const ROAD_SCALE: [f64; ROAD_DIM] = [0.05, 0.05, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
const ROUTE_SCALE: [f64; ROUTE_DIM] = [0.05, 0.05, 1.0, 1.0];
const VALUE_SCALE: [f64; VALUE_DIM] = [0.01, 0.01];

/// Packs the valid slots of a `[b][slot][dim]` array, scaled.
fn gather<R: Scalar>(
    feats: &[R],
    valid: &[u8],
    batch: usize,
    slots: usize,
    scale: &[f64],
) -> (Vec<R>, Ragged) {
    let dim = scale.len();
    let sc: Vec<R> = scale.iter().map(|&s| R::lit(s)).collect();
    let mut out = Vec::new();
    let mut counts = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut c = 0;
        for s in 0..slots {
            if valid[b * slots + s] != 0 {
                let f = &feats[(b * slots + s) * dim..(b * slots + s + 1) * dim];
                out.extend(f.iter().zip(&sc).map(|(&x, &k)| x * k));
                c += 1;
            }
        }
        counts.push(c);
    }
    (out, Ragged::from_counts(counts))
}

fn scaled<R: Scalar>(feats: &[R], scale: &[f64]) -> Vec<R> {
    feats
        .iter()
        .enumerate()
        .map(|(i, &x)| x * R::lit(scale[i % scale.len()]))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOut<R> {
    /// `[b * accel_bins + i]`
    pub logits_accel: Vec<R>,
    /// `[b * steer_bins + i]`
    pub logits_steer: Vec<R>,
    pub value: Vec<R>,
    /// `[b * width + i]`, shared by both heads.
    pub embedding: Vec<R>,
}

/// Upstream gradients of a scalar loss with respect to the model outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads<R> {
    pub logits_accel: Vec<R>,
    pub logits_steer: Vec<R>,
    pub value: Vec<R>,
}

impl<R: Scalar> HeadGrads<R> {
    pub fn zeros(batch: usize, config: &ModelConfig) -> Self {
        Self {
            logits_accel: vec![R::zero(); batch * config.accel_bins],
            logits_steer: vec![R::zero(); batch * config.steer_bins],
            value: vec![R::zero(); batch],
        }
    }
}

struct ContextCache<R> {
    tokens: Vec<R>,
    ragged: Ragged,
    feats: Vec<R>,
    block: AttnBlockCache<R>,
}

/// Intermediates retained by [`Model::forward`] for [`Model::backward`].
pub struct Cache<R> {
    batch: usize,
    latent: Ragged,
    agent_feats: Vec<R>,
    agent_ragged: Ragged,
    self_block: AttnBlockCache<R>,
    contexts: Vec<ContextCache<R>>,
    pool_ln: LnCache<R>,
    policy: Vec<ResMlpCache<R>>,
    policy_out: Vec<R>,
    value_feats: Vec<R>,
    value_emb: Vec<R>,
    value_cat: Vec<R>,
    value_h: Vec<R>,
    value: Vec<ResMlpCache<R>>,
    value_out: Vec<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    agent_embed: Dense,
    null_token: usize,
    self_block: AttnBlock,
    context_embed: Vec<Dense>,
    cross: Vec<AttnBlock>,
    pool_ln: LayerNorm,
    policy: Vec<ResMlp>,
    head_accel: Dense,
    head_steer: Dense,
    value_embed: Dense,
    value_in: Dense,
    value: Vec<ResMlp>,
    value_out: Dense,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let l = &mut ParamLayout::default();
        let agent_embed = Dense::new(l, "encoder.agent_embed", AGENT_DIM, d);
        let null_token = l.push(
            "encoder.null_token".into(),
            1,
            d,
            Init::Uniform { fan_in: d },
        );
        let self_block = AttnBlock::new_self(l, "encoder.agents", d, config.heads);
        let mut context_embed = Vec::new();
        let mut cross = Vec::new();
        for m in &config.cross_order {
            context_embed.push(Dense::new(
                l,
                &format!("encoder.{}_embed", m.name()),
                m.feature_dim(),
                config.token_width,
            ));
            cross.push(AttnBlock::new_cross(
                l,
                &format!("encoder.{}_cross", m.name()),
                d,
                config.token_width,
                config.heads,
            ));
        }
        let pool_ln = LayerNorm::new(l, "encoder.pool_ln", d);
        let policy = (0..config.trunk_depth)
            .map(|i| ResMlp::new(l, &format!("policy.block{i}"), d, d))
            .collect();
        let head_accel = Dense::new(l, "policy.accel", d, config.accel_bins);
        let head_steer = Dense::new(l, "policy.steer", d, config.steer_bins);
        let value_embed = Dense::new(l, "value.embed", VALUE_DIM, config.value_embed);
        let value_in = Dense::new(l, "value.in", d + config.value_embed, d);
        let value = (0..config.trunk_depth)
            .map(|i| ResMlp::new(l, &format!("value.block{i}"), d, d))
            .collect();
        let value_out = Dense::new(l, "value.out", d, 1);
        Ok(Self {
            layout: std::mem::take(l),
            config,
            agent_embed,
            null_token,
            self_block,
            context_embed,
            cross,
            pool_ln,
            policy,
            head_accel,
            head_steer,
            value_embed,
            value_in,
            value,
            value_out,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn init_params<R: Scalar>(&self, seed: u64) -> Vec<R> {
        self.layout.init(seed)
    }

    fn check_shapes<R: Scalar>(&self, params: &[R], obs: &ObservationBatch<R>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(NnError::Shape(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        let p = &obs.policy;
        let ok = p.active.len() == p.batch * ACTIVE_DIM
            && p.agents.len() == p.batch * p.max_agents * AGENT_DIM
            && p.agent_valid.len() == p.batch * p.max_agents
            && p.road.len() == p.batch * p.max_road * ROAD_DIM
            && p.road_valid.len() == p.batch * p.max_road
            && p.route.len() == p.batch * p.max_route * ROUTE_DIM
            && p.route_valid.len() == p.batch * p.max_route
            && obs.value_only.features.len() == p.batch * VALUE_DIM;
        if ok {
            Ok(())
        } else {
            Err(NnError::Shape(
                "observation arrays disagree with their declared sizes".into(),
            ))
        }
    }

    fn context<R: Scalar>(&self, m: Modality, obs: &ObservationBatch<R>) -> (Vec<R>, Ragged) {
        let p = &obs.policy;
        match m {
            Modality::RoadNetwork => {
                gather(&p.road, &p.road_valid, p.batch, p.max_road, &ROAD_SCALE)
            }
            Modality::Route => gather(&p.route, &p.route_valid, p.batch, p.max_route, &ROUTE_SCALE),
            Modality::ActiveAgent => (
                scaled(&p.active, &ACTIVE_SCALE),
                Ragged::from_counts(std::iter::repeat(1).take(p.batch)),
            ),
        }
    }

    pub fn forward<R: Scalar>(
        &self,
        params: &[R],
        obs: &ObservationBatch<R>,
    ) -> Result<(ForwardOut<R>, Cache<R>)> {
        self.check_shapes(params, obs)?;
        let p = params;
        let d = self.config.width;
        let n = obs.batch();
        let po = &obs.policy;

        let (agent_feats, agent_ragged) =
            gather(&po.agents, &po.agent_valid, n, po.max_agents, &AGENT_SCALE);
        let agent_emb = self
            .agent_embed
            .forward(p, &agent_feats, agent_ragged.total());
        let latent = Ragged::from_counts((0..n).map(|b| 1 + agent_ragged.count(b)));
        let mut x = Vec::with_capacity(latent.total() * d);
        let null = &p[self.null_token..self.null_token + d];
        for b in 0..n {
            x.extend_from_slice(null);
            let r = agent_ragged.range(b);
            x.extend_from_slice(&agent_emb[r.start * d..r.end * d]);
        }

        let (mut x, self_cache) = self.self_block.forward(p, &x, &latent, None);
        let mut contexts = Vec::with_capacity(self.cross.len());
        for (i, &m) in self.config.cross_order.iter().enumerate() {
            let (feats, ragged) = self.context(m, obs);
            let mut tokens = self.context_embed[i].forward(p, &feats, ragged.total());
            relu(&mut tokens);
            let (y, block) = self.cross[i].forward(p, &x, &latent, Some((&tokens, &ragged)));
            x = y;
            contexts.push(ContextCache {
                tokens,
                ragged,
                feats,
                block,
            });
        }

        let mut mean = vec![R::zero(); n * d];
        for b in 0..n {
            let inv = R::one() / R::of_usize(latent.count(b));
            let acc = &mut mean[b * d..(b + 1) * d];
            for t in latent.range(b) {
                for (a, &v) in acc.iter_mut().zip(&x[t * d..(t + 1) * d]) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
        let (pooled, pool_ln) = self.pool_ln.forward(p, &mean);

        let mut h = pooled.clone();
        let mut policy = Vec::with_capacity(self.policy.len());
        for blk in &self.policy {
            let (y, c) = blk.forward(p, &h);
            h = y;
            policy.push(c);
        }
        let logits_accel = self.head_accel.forward(p, &h, n);
        let logits_steer = self.head_steer.forward(p, &h, n);

        let value_feats = scaled(&obs.value_only.features, &VALUE_SCALE);
        let mut value_emb = self.value_embed.forward(p, &value_feats, n);
        relu(&mut value_emb);
        let ve = self.config.value_embed;
        let mut value_cat = Vec::with_capacity(n * (d + ve));
        for b in 0..n {
            value_cat.extend_from_slice(&pooled[b * d..(b + 1) * d]);
            value_cat.extend_from_slice(&value_emb[b * ve..(b + 1) * ve]);
        }
        let mut value_h = self.value_in.forward(p, &value_cat, n);
        relu(&mut value_h);
        let mut hv = value_h.clone();
        let mut value = Vec::with_capacity(self.value.len());
        for blk in &self.value {
            let (y, c) = blk.forward(p, &hv);
            hv = y;
            value.push(c);
        }
        let v = self.value_out.forward(p, &hv, n);

        let out = ForwardOut {
            logits_accel,
            logits_steer,
            value: v,
            embedding: pooled,
        };
        let cache = Cache {
            batch: n,
            latent,
            agent_feats,
            agent_ragged,
            self_block: self_cache,
            contexts,
            pool_ln,
            policy,
            policy_out: h,
            value_feats,
            value_emb,
            value_cat,
            value_h,
            value,
            value_out: hv,
        };
        Ok((out, cache))
    }

    /// Accumulates the parameter gradient of the loss whose output gradients are `dy` into `grad`.
    pub fn backward<R: Scalar>(
        &self,
        params: &[R],
        cache: &Cache<R>,
        dy: &HeadGrads<R>,
        grad: &mut [R],
    ) -> Result<()> {
        let n = cache.batch;
        let d = self.config.width;
        let ve = self.config.value_embed;
        if grad.len() != self.layout.total
            || dy.logits_accel.len() != n * self.config.accel_bins
            || dy.logits_steer.len() != n * self.config.steer_bins
            || dy.value.len() != n
        {
            return Err(NnError::Shape(
                "gradient buffers disagree with the forward batch".into(),
            ));
        }
        let (p, g) = (params, grad);

        // value trunk
        let mut dh = self
            .value_out
            .backward(p, g, &cache.value_out, n, &dy.value, true)
            .unwrap();
        for (blk, c) in self.value.iter().zip(&cache.value).rev() {
            dh = blk.backward(p, g, c, &dh);
        }
        relu_backward(&cache.value_h, &mut dh);
        let dcat = self
            .value_in
            .backward(p, g, &cache.value_cat, n, &dh, true)
            .unwrap();
        let mut dpooled = vec![R::zero(); n * d];
        let mut dve = vec![R::zero(); n * ve];
        for b in 0..n {
            let row = &dcat[b * (d + ve)..(b + 1) * (d + ve)];
            dpooled[b * d..(b + 1) * d].copy_from_slice(&row[..d]);
            dve[b * ve..(b + 1) * ve].copy_from_slice(&row[d..]);
        }
        relu_backward(&cache.value_emb, &mut dve);
        self.value_embed
            .backward(p, g, &cache.value_feats, n, &dve, false);

        // policy trunk
        let mut dh = self
            .head_accel
            .backward(p, g, &cache.policy_out, n, &dy.logits_accel, true)
            .unwrap();
        let ds = self
            .head_steer
            .backward(p, g, &cache.policy_out, n, &dy.logits_steer, true)
            .unwrap();
        for (a, b) in dh.iter_mut().zip(ds) {
            *a += b;
        }
        for (blk, c) in self.policy.iter().zip(&cache.policy).rev() {
            dh = blk.backward(p, g, c, &dh);
        }
        for (a, b) in dpooled.iter_mut().zip(dh) {
            *a += b;
        }

        // encoder
        let dmean = self.pool_ln.backward(p, g, &cache.pool_ln, &dpooled);
        let latent = &cache.latent;
        let mut dx = vec![R::zero(); latent.total() * d];
        for b in 0..n {
            let inv = R::one() / R::of_usize(latent.count(b));
            let src = &dmean[b * d..(b + 1) * d];
            for t in latent.range(b) {
                for (o, &s) in dx[t * d..(t + 1) * d].iter_mut().zip(src) {
                    *o = s * inv;
                }
            }
        }
        for (i, c) in cache.contexts.iter().enumerate().rev() {
            let (dxi, dctx) =
                self.cross[i].backward(p, g, &c.block, latent, Some((&c.tokens, &c.ragged)), &dx);
            dx = dxi;
            let mut dt = dctx.unwrap();
            relu_backward(&c.tokens, &mut dt);
            self.context_embed[i].backward(p, g, &c.feats, c.ragged.total(), &dt, false);
        }
        let (dx, _) = self
            .self_block
            .backward(p, g, &cache.self_block, latent, None, &dx);
        let ar = &cache.agent_ragged;
        let mut demb = Vec::with_capacity(ar.total() * d);
        for b in 0..n {
            let r = latent.range(b);
            for (o, &v) in g[self.null_token..self.null_token + d]
                .iter_mut()
                .zip(&dx[r.start * d..(r.start + 1) * d])
            {
                *o += v;
            }
            demb.extend_from_slice(&dx[(r.start + 1) * d..r.end * d]);
        }
        self.agent_embed
            .backward(p, g, &cache.agent_feats, ar.total(), &demb, false);
        Ok(())
    }
}
