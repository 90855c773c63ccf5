//! Neural estimation of mutual information and self-information between
//! features.
//!
//! Dependency between two features is scored with a trainable discriminator
//! over global/local views: the shallower feature contributes a spatially
//! resolved local embedding, the deeper feature a pooled global embedding,
//! and their dot product at every location is pushed through a
//! Jensen-Shannon softplus loss on positive (same sample) versus negative
//! (deranged sample) pairs. Lower loss means higher estimated information.
//! Self-information uses the same machinery with both views taken from the
//! same feature.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, Linear};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Derangement over batch indices used for negative pairing.
#[derive(Debug, Clone)]
pub struct PairingPlan {
    perm: Vec<usize>,
}

impl PairingPlan {
    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        if perm.len() < 2 {
            return Err(Error::arg(
                "pairing_plan",
                "need a batch of at least 2 for negative pairs",
            ));
        }
        if perm.iter().enumerate().any(|(i, &p)| p == i || p >= perm.len()) {
            return Err(Error::arg(
                "pairing_plan",
                "permutation must be a derangement within the batch",
            ));
        }
        Ok(PairingPlan { perm })
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Cyclic-shift derangement: sample i pairs with sample (i+1) mod N.
pub fn sample_negatives(batch_size: usize) -> Result<PairingPlan> {
    if batch_size < 2 {
        return Err(Error::arg(
            "sample_negatives",
            format!("batch size {batch_size} has no negatives"),
        ));
    }
    PairingPlan::from_permutation((0..batch_size).map(|i| (i + 1) % batch_size).collect())
}

/// Trainable scorer for (local, global) view pairs.
///
/// Separate instances are used per feature pair and per self-information
/// term; there is no weight sharing.
pub struct Discriminator<E: Elem> {
    local1: Conv2d<E>,
    local2: Conv2d<E>,
    global1: Linear<E>,
    global2: Linear<E>,
    pub embed: usize,
}

impl<E: Elem> Discriminator<E> {
    /// `local_ch`/`global_ch` are the channel counts of the feature supplying
    /// the local map and the global vector respectively.
    pub fn init(rng: &mut SeedRng, local_ch: usize, global_ch: usize, embed: usize) -> Self {
        Discriminator {
            local1: Conv2d::init(rng, local_ch, embed, 1, 1, 0, true),
            local2: Conv2d::init(rng, embed, embed, 1, 1, 0, true),
            global1: Linear::init(rng, global_ch, embed),
            global2: Linear::init(rng, embed, embed),
            embed,
        }
    }

    /// [N,C,H,W] -> [N,E,H,W] embedding of every spatial location.
    pub fn local_embed(&self, feature: &Tensor<E>) -> Result<Tensor<E>> {
        let h = self.local1.forward(feature)?.relu();
        self.local2.forward(&h)
    }

    /// [N,C,H,W] -> [N,E] pooled embedding.
    pub fn global_embed(&self, feature: &Tensor<E>) -> Result<Tensor<E>> {
        let pooled = feature.global_avg_pool()?;
        let h = self.global1.forward(&pooled)?.relu();
        self.global2.forward(&h)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.local1.collect_params(&format!("{prefix}.local1"), out);
        self.local2.collect_params(&format!("{prefix}.local2"), out);
        self.global1.collect_params(&format!("{prefix}.global1"), out);
        self.global2.collect_params(&format!("{prefix}.global2"), out);
    }

    pub fn trainable_params(&self) -> Vec<Tensor<E>> {
        let mut named = Vec::new();
        self.collect_params("disc", &mut named);
        named.into_iter().map(|(_, t)| t).collect()
    }
}

/// Jensen-Shannon softplus loss over positive and negative pair scores:
/// `mean(softplus(neg)) + mean(softplus(-pos))`. Always positive; lower
/// loss corresponds to higher estimated information.
pub fn jsd_loss<E: Elem>(pos_scores: &Tensor<E>, neg_scores: &Tensor<E>) -> Result<Tensor<E>> {
    if pos_scores.numel() == 0 || neg_scores.numel() == 0 {
        return Err(Error::arg("jsd_loss", "score tensors must be non-empty"));
    }
    let pos_term = pos_scores.scale(-1.0).softplus().mean();
    let neg_term = neg_scores.softplus().mean();
    neg_term.add(&pos_term)
}

fn check_pairing<E: Elem>(
    op: &'static str,
    local_src: &Tensor<E>,
    global_src: &Tensor<E>,
    plan: &PairingPlan,
) -> Result<()> {
    let n = local_src.shape()[0];
    if global_src.shape()[0] != n {
        return Err(Error::shape(
            op,
            format!(
                "batch mismatch: {n} local vs {} global samples",
                global_src.shape()[0]
            ),
        ));
    }
    if n < 2 {
        return Err(Error::arg(op, "need a batch of at least 2"));
    }
    if plan.len() != n {
        return Err(Error::shape(
            op,
            format!("pairing plan covers {} samples, batch has {n}", plan.len()),
        ));
    }
    Ok(())
}

/// Mutual-information JSD loss between a shallow feature (local views) and a
/// deep feature (global view). Gradients flow into both features and into
/// the discriminator.
pub fn mi_loss<E: Elem>(
    shallow: &Tensor<E>,
    deep: &Tensor<E>,
    disc: &Discriminator<E>,
    plan: &PairingPlan,
) -> Result<Tensor<E>> {
    check_pairing("mi_loss", shallow, deep, plan)?;
    let local = disc.local_embed(shallow)?;
    let global = disc.global_embed(deep)?;
    let pos = local.score_local_global(&global)?;
    let global_neg = global.index_select(plan.indices())?;
    let neg = local.score_local_global(&global_neg)?;
    jsd_loss(&pos, &neg)
}

/// Self-information loss: both views come from the same feature.
pub fn si_loss<E: Elem>(
    feature: &Tensor<E>,
    disc: &Discriminator<E>,
    plan: &PairingPlan,
) -> Result<Tensor<E>> {
    mi_loss(feature, feature, disc, plan)
}

/// Result of one estimator benchmark run on correlated Gaussians.
#[derive(Debug, Clone)]
pub struct MiBenchPoint {
    pub rho: f64,
    pub analytic_mi_nats: f64,
    /// Mean loss over the final tenth of training.
    pub converged_loss: f64,
    pub losses: Vec<f64>,
}

/// Train a fresh discriminator on correlated Gaussian pairs for each `rho`
/// and report its converged JSD loss next to the analytic MI. Higher true
/// dependency must drive the loss lower.
pub fn mi_bench(
    rhos: &[f64],
    steps: usize,
    dim: usize,
    embed: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<MiBenchPoint>> {
    use crate::data::synthetic::{corr_gaussian_batch, GaussianPairSpec};
    use crate::train::optim::Sgd;

    if steps == 0 || batch < 2 {
        return Err(Error::arg("mi_bench", "need steps >= 1 and batch >= 2"));
    }
    let mut out = Vec::with_capacity(rhos.len());
    for (ri, &rho) in rhos.iter().enumerate() {
        let spec = GaussianPairSpec::new(rho, dim)?;
        let mut init_rng = SeedRng::derive(seed, 0x6d69626e ^ ri as u64);
        let disc = Discriminator::<f32>::init(&mut init_rng, dim, dim, embed);
        let mut opt = Sgd::new(disc.trainable_params(), lr, 0.9, 0.0);
        let plan = sample_negatives(batch)?;
        let mut data_rng = SeedRng::derive(seed, 0x64617461 ^ ri as u64);
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (x, y) = corr_gaussian_batch::<f32>(&spec, batch, &mut data_rng);
            let x = x.reshape(&[batch, dim, 1, 1])?;
            let y = y.reshape(&[batch, dim, 1, 1])?;
            let loss = mi_loss(&x, &y, &disc, &plan)?;
            opt.zero_grads();
            loss.backward()?;
            opt.step()?;
            losses.push(loss.item() as f64);
        }
        let tail = (steps / 10).max(1);
        let converged_loss = losses[steps - tail..].iter().sum::<f64>() / tail as f64;
        out.push(MiBenchPoint {
            rho,
            analytic_mi_nats: spec.analytic_mi_nats(),
            converged_loss,
            losses,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LN_2: f64 = 2.0 * std::f64::consts::LN_2;

    #[test]
    fn cyclic_negatives_are_a_derangement() {
        assert_eq!(sample_negatives(2).unwrap().indices(), &[1, 0]);
        assert_eq!(sample_negatives(4).unwrap().indices(), &[1, 2, 3, 0]);
        for n in 2..=64 {
            let plan = sample_negatives(n).unwrap();
            assert!(plan.indices().iter().enumerate().all(|(i, &p)| p != i));
        }
        assert!(sample_negatives(1).is_err());
    }

    #[test]
    fn jsd_at_zero_scores_is_two_ln_two() {
        let pos = Tensor::<f64>::zeros(&[8]);
        let neg = Tensor::<f64>::zeros(&[8]);
        let loss = jsd_loss(&pos, &neg).unwrap();
        assert!((loss.item() - TWO_LN_2).abs() < 1e-6);
    }

    #[test]
    fn jsd_closed_form_at_plus_minus_two() {
        let pos = Tensor::<f64>::full(&[4], 2.0);
        let neg = Tensor::<f64>::full(&[4], -2.0);
        let loss = jsd_loss(&pos, &neg).unwrap();
        // 2 * softplus(-2)
        let want = 2.0 * (1.0 + (-2.0f64).exp()).ln();
        assert!((loss.item() - want).abs() < 1e-9);
        assert!((loss.item() - 0.253_856).abs() < 1e-6);
    }

    #[test]
    fn jsd_diverges_linearly_for_swapped_scores() {
        for &s in &[10.0f64, 40.0] {
            let pos = Tensor::<f64>::full(&[2], -s);
            let neg = Tensor::<f64>::full(&[2], s);
            let loss = jsd_loss(&pos, &neg).unwrap().item();
            assert!((loss - 2.0 * s).abs() < 1e-3, "loss {loss} vs {}", 2.0 * s);
        }
    }

    #[test]
    fn jsd_is_monotone_in_scores() {
        // decreasing in positive scores, increasing in negative scores
        let base = jsd_loss(&Tensor::<f64>::full(&[1], 0.5), &Tensor::<f64>::full(&[1], -0.5))
            .unwrap()
            .item();
        let better_pos =
            jsd_loss(&Tensor::<f64>::full(&[1], 0.6), &Tensor::<f64>::full(&[1], -0.5))
                .unwrap()
                .item();
        let worse_neg =
            jsd_loss(&Tensor::<f64>::full(&[1], 0.5), &Tensor::<f64>::full(&[1], -0.4))
                .unwrap()
                .item();
        assert!(better_pos < base);
        assert!(worse_neg > base);
    }

    fn tiny_disc(seed: u64) -> Discriminator<f64> {
        let mut rng = SeedRng::new(seed);
        Discriminator::init(&mut rng, 3, 5, 4)
    }

    #[test]
    fn zeroed_discriminator_gives_two_ln_two() {
        let disc = tiny_disc(1);
        for p in disc.trainable_params() {
            let n = p.numel();
            p.data_mut().copy_from_slice(&vec![0.0; n]);
        }
        let mut rng = SeedRng::new(2);
        let f_i = crate::tensor::gradcheck::rand_input(&[4, 3, 2, 2], &mut rng, 1.0);
        let f_t = crate::tensor::gradcheck::rand_input(&[4, 5, 2, 2], &mut rng, 1.0);
        let plan = sample_negatives(4).unwrap();
        let loss = mi_loss(&f_i, &f_t, &disc, &plan).unwrap();
        assert!((loss.item() - TWO_LN_2).abs() < 1e-9);
    }

    #[test]
    fn batch_size_mismatch_is_rejected() {
        let disc = tiny_disc(3);
        let f_i = Tensor::<f64>::zeros(&[4, 3, 2, 2]);
        let f_t = Tensor::<f64>::zeros(&[3, 5, 2, 2]);
        let plan = sample_negatives(4).unwrap();
        assert!(mi_loss(&f_i, &f_t, &disc, &plan).is_err());
    }

    #[test]
    fn mi_loss_is_permutation_equivariant() {
        let disc = tiny_disc(4);
        let mut rng = SeedRng::new(5);
        let f_i = crate::tensor::gradcheck::rand_input(&[4, 3, 2, 2], &mut rng, 1.0);
        let f_t = crate::tensor::gradcheck::rand_input(&[4, 5, 2, 2], &mut rng, 1.0);
        let plan = sample_negatives(4).unwrap();
        let base = mi_loss(&f_i, &f_t, &disc, &plan).unwrap().item();

        // apply batch permutation sigma to features and conjugate the plan
        let sigma = [2usize, 0, 3, 1];
        let f_i_p = f_i.index_select(&sigma).unwrap();
        let f_t_p = f_t.index_select(&sigma).unwrap();
        // new_plan[k] = position of plan[sigma[k]] in sigma
        let mut inv = [0usize; 4];
        for (k, &s) in sigma.iter().enumerate() {
            inv[s] = k;
        }
        let old = plan.indices();
        let conj: Vec<usize> = sigma.iter().map(|&s| inv[old[s]]).collect();
        let plan_p = PairingPlan::from_permutation(conj).unwrap();
        let permuted = mi_loss(&f_i_p, &f_t_p, &disc, &plan_p).unwrap().item();
        assert!((base - permuted).abs() < 1e-6, "{base} vs {permuted}");
    }

    #[test]
    fn mi_loss_gradients_match_finite_differences() {
        use crate::tensor::gradcheck::{finite_diff_check, rand_param};
        let disc = tiny_disc(6);
        let mut rng = SeedRng::new(7);
        let f_i = rand_param(&[3, 3, 2, 2], &mut rng, 1.0);
        let f_t = rand_param(&[3, 5, 2, 2], &mut rng, 1.0);
        let plan = sample_negatives(3).unwrap();
        let disc_params = disc.trainable_params();
        let mut all: Vec<&Tensor<f64>> = vec![&f_i, &f_t];
        all.extend(disc_params.iter());
        let check = finite_diff_check(&all, || mi_loss(&f_i, &f_t, &disc, &plan).unwrap(), 1e-5)
            .unwrap();
        assert!(
            check.max_rel_err < 1e-4,
            "mi_loss rel err {}",
            check.max_rel_err
        );
    }

    #[test]
    fn si_loss_gradients_match_finite_differences() {
        use crate::tensor::gradcheck::{finite_diff_check, rand_param};
        let mut rng = SeedRng::new(8);
        let disc = Discriminator::<f64>::init(&mut rng, 3, 3, 4);
        let f = rand_param(&[3, 3, 2, 2], &mut rng, 1.0);
        let plan = sample_negatives(3).unwrap();
        let disc_params = disc.trainable_params();
        let mut all: Vec<&Tensor<f64>> = vec![&f];
        all.extend(disc_params.iter());
        let check =
            finite_diff_check(&all, || si_loss(&f, &disc, &plan).unwrap(), 1e-5).unwrap();
        assert!(
            check.max_rel_err < 1e-4,
            "si_loss rel err {}",
            check.max_rel_err
        );
    }
}
