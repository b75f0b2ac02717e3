use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sps_autodiff::check::check_params;
use sps_autodiff::{Graph, Tensor, Var};
use sps_core::data::SeqData;
use sps_core::groups::{GroupElement, GroupSpec};
use sps_core::models::{Mode, Model, ModelConfig, Prior, Task, Variant};
use sps_core::training::{forward_three_branch, total_loss, train, Draws, LossBreakdown, TrainConfig};
use sps_datasets::world::{make_dataset, RenderConfig, SimConfig};

fn small(task: Task, variant: Variant, mode: Mode) -> ModelConfig {
    let mut c = ModelConfig::new(task, variant, mode);
    c.conv_channels = c.conv_channels.iter().map(|&w| w / 8).collect();
    c.fc_hidden = c.fc_hidden.iter().map(|&w| w / 8).collect();
    c.rnn_hidden = 8;
    c
}

fn frames(cfg: &ModelConfig, n: usize, seed: u64) -> Tensor {
    let [c, h, w] = cfg.obs_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, c, h, w], |_| rand::Rng::random_range(&mut rng, 0.0..1.0))
}

fn eps(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, d], |_| rand::Rng::random_range(&mut rng, -1.0..1.0))
}

fn draws_with(b: usize, t: usize, elements: Vec<Vec<GroupElement>>, eps: Option<Tensor>) -> Draws {
    let mut d = Draws::deterministic(b, t);
    d.elements = elements;
    d.eps = eps;
    d
}

fn loss_of(model: &Model, prior: Option<&dyn Prior>, x: &Tensor, b: usize, t: usize, draws: &Draws, cfg: &TrainConfig) -> LossBreakdown {
    let mut g = Graph::new(&model.params);
    let out = forward_three_branch(&mut g, model, prior, x.clone(), b, t, draws).unwrap();
    total_loss(&mut g, &out, x, b, t, &model.config, cfg).unwrap().1
}

/// `z_{t+1} = z_t + c`: commutes with every translation.
struct Drift(Vec<f32>);

impl Prior for Drift {
    fn step(&self, g: &mut Graph<'_>, x: Var, _h: Option<Var>) -> sps_core::Result<(Var, Var)> {
        let (n, d) = (g.value(x).dim(0), g.value(x).dim(1));
        let mut eye = Vec::with_capacity(n * d * d);
        let mut shift = Vec::with_capacity(n * d);
        for _ in 0..n {
            for i in 0..d {
                eye.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
            }
            shift.extend_from_slice(&self.0);
        }
        let y = g.affine_rows(x, eye, &shift)?;
        Ok((y, y))
    }
}

fn translations(b: usize, k: usize, seed: u64) -> Vec<Vec<GroupElement>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            (0..b)
                .map(|_| {
                    let t = (0..2).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
                    GroupElement::translation(vec![0, 2], t)
                })
                .collect()
        })
        .collect()
}

#[test]
fn equivariant_prior_gives_zero_symmetry_gap() {
    let model = Model::new(small(Task::Vision, Variant::Sps, Mode::Ae), 1).unwrap();
    let (b, t) = (2, 5);
    let x = frames(&model.config, b * t, 2);
    for prior in [Drift(vec![0.0; 3]), Drift(vec![0.3, -0.1, 0.7])] {
        let draws = draws_with(b, t, translations(b, 3, 5), None);
        let mut g = Graph::new(&model.params);
        let out = forward_three_branch(&mut g, &model, Some(&prior), x.clone(), b, t, &draws).unwrap();
        let z_hat = g.value(out.z_hat.unwrap()).clone();
        for zt in &out.z_tilde {
            for (a, c) in g.value(*zt).data().iter().zip(z_hat.data()) {
                assert!((a - c).abs() <= 1e-5, "{a} vs {c}");
            }
        }
    }
}

#[test]
fn breakdown_sums_to_total_and_weights_are_linear() {
    let model = Model::new(small(Task::Vision, Variant::Sps, Mode::Vae), 3).unwrap();
    let (b, t) = (2, 4);
    let x = frames(&model.config, b * t, 4);
    let draws = draws_with(b, t, translations(b, 2, 6), Some(eps(b * t, 3, 7)));
    let prior = model.prior().unwrap();
    let mut cfg = TrainConfig::new(Task::Vision);
    let br = loss_of(&model, Some(prior), &x, b, t, &draws, &cfg);
    let sum = br.rec + br.weighted_prior + br.weighted_sym + br.weighted_kld;
    assert!((sum - br.total).abs() <= 1e-5 * br.total.abs(), "{sum} vs {}", br.total);
    assert!((br.rec - (br.rec_direct + br.rec_pred + br.rec_sym)).abs() <= 1e-5 * br.rec);
    assert!((br.weighted_prior - cfg.lambda1 * br.prior).abs() <= 1e-5 * br.weighted_prior.abs().max(1e-6));

    cfg.lambda2 *= 2.0;
    let doubled = loss_of(&model, Some(prior), &x, b, t, &draws, &cfg);
    assert_eq!(doubled.sym, br.sym);
    assert!((doubled.weighted_sym - 2.0 * br.weighted_sym).abs() <= 1e-6 * br.weighted_sym.abs().max(1e-6));
}

#[test]
fn symmetry_loss_averages_over_elements() {
    let model = Model::new(small(Task::Vision, Variant::Sps, Mode::Ae), 5).unwrap();
    let (b, t) = (2, 4);
    let x = frames(&model.config, b * t, 8);
    let prior = model.prior().unwrap();
    let cfg = TrainConfig::new(Task::Vision);
    let elems = translations(b, 3, 9);
    let all = loss_of(&model, Some(prior), &x, b, t, &draws_with(b, t, elems.clone(), None), &cfg);
    let singles: Vec<LossBreakdown> = elems
        .iter()
        .map(|e| loss_of(&model, Some(prior), &x, b, t, &draws_with(b, t, vec![e.clone()], None), &cfg))
        .collect();
    let mean_sym = singles.iter().map(|s| s.sym).sum::<f64>() / 3.0;
    let mean_rec = singles.iter().map(|s| s.rec_sym).sum::<f64>() / 3.0;
    assert!((all.sym - mean_sym).abs() <= 1e-4 * mean_sym.max(1e-6));
    assert!((all.rec_sym - mean_rec).abs() <= 1e-4 * mean_rec);
}

#[test]
fn ae_without_augmentation_has_two_terms() {
    let model = Model::new(small(Task::Audio, Variant::Sps, Mode::Ae), 6).unwrap();
    let (b, t) = (3, 5);
    let x = frames(&model.config, b * t, 10);
    let mut cfg = TrainConfig::new(Task::Audio);
    cfg.k = 0;
    let br = loss_of(&model, model.prior().map(|p| p as &dyn Prior), &x, b, t, &draws_with(b, t, vec![], None), &cfg);
    assert_eq!((br.sym, br.rec_sym, br.kld), (0.0, 0.0, 0.0));
    let expect = br.rec_direct + br.rec_pred + cfg.lambda1 * br.prior;
    assert!((br.total - expect).abs() <= 1e-5 * expect);
}

#[test]
fn beta_vae_keeps_direct_reconstruction_and_kld() {
    let model = Model::new(small(Task::Vision, Variant::BetaVae, Mode::Vae), 7).unwrap();
    let (b, t) = (2, 3);
    let x = frames(&model.config, b * t, 11);
    let cfg = TrainConfig::new(Task::Vision);
    let br = loss_of(&model, None, &x, b, t, &draws_with(b, t, vec![], Some(eps(b * t, 3, 1))), &cfg);
    assert_eq!((br.rec_pred, br.prior, br.sym), (0.0, 0.0, 0.0));
    assert!(br.kld > 0.0);
    let expect = br.rec_direct + cfg.lambda3 * br.kld;
    assert!((br.total - expect).abs() <= 1e-5 * expect);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    for (task, variant) in [(Task::Vision, Variant::Sps), (Task::Audio, Variant::SpsPlus)] {
        let model = Model::new(small(task, variant, Mode::Vae), 12).unwrap();
        let (b, t) = (2, 4);
        let x = frames(&model.config, b * t, 13);
        let d = model.config.latent_dim();
        let group = TrainConfig::new(task).group;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let elements = (0..2)
            .map(|_| (0..b).map(|_| sps_core::groups::sample_element(&group, &mut rng)).collect())
            .collect();
        let mut draws = draws_with(b, t, elements, Some(eps(b * t, d, 15)));
        draws.tau = vec![1, 3];
        draws.masks = vec![vec![true, false], vec![false, true]];
        let cfg = TrainConfig::new(task);
        let mut params = model.params.clone();
        let report = check_params(
            &mut params,
            |g| {
                let prior = model.prior().map(|p| p as &dyn Prior);
                let out = forward_three_branch(g, &model, prior, x.clone(), b, t, &draws).unwrap();
                Ok(total_loss(g, &out, &x, b, t, &model.config, &cfg).unwrap().0)
            },
            10,
            1e-3,
            &mut rng,
        )
        .unwrap();
        assert!(report.passes(1e-2), "{:?} worst {:?}", task, report.worst());
    }
}

fn tiny_dataset(n: usize, seed: u64) -> (tempfile::TempDir, SeqData) {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), n, false, &SimConfig::default(), &RenderConfig::default(), seed).unwrap();
    let data = SeqData::load(dir.path()).unwrap();
    (dir, data)
}

fn quick(iterations: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(Task::Vision);
    cfg.iterations = iterations;
    cfg.tf_decay_iterations = iterations * 5 / 6;
    cfg.batch_size = 4;
    cfg.log_every = 1;
    cfg
}

#[test]
fn beta_vae_never_samples_group_elements() {
    let (_dir, data) = tiny_dataset(10, 1);
    let out = train(&small(Task::Vision, Variant::BetaVae, Mode::Vae), &quick(3), &data, None, &mut |_| {}).unwrap();
    assert_eq!(out.group_samples, 0);
    let sps = train(&small(Task::Vision, Variant::Sps, Mode::Vae), &quick(3), &data, None, &mut |_| {}).unwrap();
    assert_eq!(sps.group_samples, 3 * 4 * 4);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let (_dir, data) = tiny_dataset(10, 2);
    let cfg = small(Task::Vision, Variant::Sps, Mode::Vae);
    let runs: Vec<tempfile::TempDir> = (0..2)
        .map(|_| {
            let out = tempfile::tempdir().unwrap();
            train(&cfg, &quick(4), &data, Some(out.path()), &mut |_| {}).unwrap();
            out
        })
        .collect();
    let mut names: Vec<_> = std::fs::read_dir(runs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let a = std::fs::read(runs[0].path().join(&name)).unwrap();
        let b = std::fs::read(runs[1].path().join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

#[test]
fn smoke_run_reduces_the_loss() {
    let (_dir, data) = tiny_dataset(8, 3);
    let mut rows = Vec::new();
    train(&small(Task::Vision, Variant::Sps, Mode::Vae), &quick(200), &data, None, &mut |r| rows.push(r.total)).unwrap();
    assert_eq!(rows.len(), 200);
    let means: Vec<f64> = rows.chunks(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    for w in means.windows(2) {
        assert!(w[1] < w[0], "moving averages {means:?}");
    }
}

#[test]
fn task_mismatch_is_a_config_error() {
    let (_dir, data) = tiny_dataset(10, 4);
    let err = train(&small(Task::Audio, Variant::Sps, Mode::Vae), &quick(1), &data, None, &mut |_| {})
        .err()
        .unwrap();
    assert!(err.is_config(), "{err}");
}

#[test]
fn group_must_fit_content_dims() {
    let mut cfg = quick(1);
    cfg.group = GroupSpec::new("bad", &[4], &[]);
    assert!(cfg.validate(&small(Task::Vision, Variant::Sps, Mode::Vae)).is_err());
}

