//! Central finite-difference oracle for the autodiff graph.
//!
//! Every op is wrapped so its output is contracted with a fixed random
//! tensor into a scalar; the analytic gradient of that scalar with respect to
//! each input is compared with `(L(x+h) − L(x−h)) / 2h`.

use attn_thermo::nn::{Graph, LogitRows, NodeId, ParamStore, ProbeMode, Tensor, Transformer, TransformerConfig};
use attn_thermo::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude both gradients count as zero and the absolute
/// difference is compared instead.
const FLOOR: f64 = 1e-6;
/// At most this many coordinates per input are perturbed.
const MAX_COORDS: usize = 48;
pub const SHAPES_PER_OP: usize = 5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'a;
type Case = (Vec<Tensor<f64>>, Box<Build<'static>>);

fn scalar_loss(
    build: &Build,
    inputs: &[Tensor<f64>],
    contraction: &Option<Tensor<f64>>,
) -> Result<(Graph<f64>, Vec<NodeId>, NodeId)> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    let loss = match contraction {
        None => out,
        Some(r) => {
            let r = g.input(r.clone());
            let prod = g.mul(out, r)?;
            g.sum(prod)
        }
    };
    Ok((g, ids, loss))
}

/// Worst relative error of one op at one set of inputs.
pub fn check(rng: &mut ChaCha8Rng, inputs: Vec<Tensor<f64>>, build: &Build) -> Result<f64> {
    let probe = scalar_loss(build, &inputs, &None)?;
    let out_shape = probe.0.value(probe.2).shape().to_vec();
    let contraction = (out_shape.iter().product::<usize>() != 1).then(|| randn(rng, &out_shape));

    let (g, ids, loss) = scalar_loss(build, &inputs, &contraction)?;
    let grads = g.backward(loss, &ParamStore::new())?;
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let (g, _, l) = scalar_loss(build, xs, &contraction)?;
        Ok(g.value(l).data()[0])
    };

    let mut worst: f64 = 0.0;
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads.node(*id).expect("variables receive gradients").data().to_vec();
        let n = inputs[i].len();
        let coords: Vec<usize> =
            if n <= MAX_COORDS { (0..n).collect() } else { (0..MAX_COORDS).map(|_| rng.random_range(0..n)).collect() };
        for j in coords {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub name: &'static str,
    pub shapes: usize,
    pub worst: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.shapes >= SHAPES_PER_OP && self.worst < TOLERANCE
    }
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Runs every op over [`SHAPES_PER_OP`] random shapes.
pub fn check_all_ops(seed: u64) -> Result<Vec<OpReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run =
        |name: &'static str, rng: &mut ChaCha8Rng, make: &mut dyn FnMut(&mut ChaCha8Rng) -> Case| -> Result<()> {
            let mut worst: f64 = 0.0;
            for _ in 0..SHAPES_PER_OP {
                let (inputs, build) = make(rng);
                worst = worst.max(check(rng, inputs, build.as_ref())?);
            }
            reports.push(OpReport { name, shapes: SHAPES_PER_OP, worst });
            Ok(())
        };

    run("matmul", &mut rng, &mut |r| {
        let (m, k, n) = (dim(r, 1, 6), dim(r, 1, 6), dim(r, 1, 6));
        (vec![randn(r, &[m, k]), randn(r, &[k, n])], Box::new(|g, x| g.matmul(x[0], x[1])))
    })?;
    run("add", &mut rng, &mut |r| {
        let s = [dim(r, 1, 5), dim(r, 1, 5)];
        (vec![randn(r, &s), randn(r, &s)], Box::new(|g, x| g.add(x[0], x[1])))
    })?;
    run("add_bias", &mut rng, &mut |r| {
        let (m, n) = (dim(r, 1, 6), dim(r, 1, 6));
        (vec![randn(r, &[m, n]), randn(r, &[n])], Box::new(|g, x| g.add_bias(x[0], x[1])))
    })?;
    run("mul", &mut rng, &mut |r| {
        let s = [dim(r, 1, 5), dim(r, 1, 5)];
        (vec![randn(r, &s), randn(r, &s)], Box::new(|g, x| g.mul(x[0], x[1])))
    })?;
    run("scale", &mut rng, &mut |r| {
        let s = [dim(r, 1, 5), dim(r, 1, 5)];
        let c: f64 = r.sample(StandardNormal);
        (vec![randn(r, &s)], Box::new(move |g, x| Ok(g.scale(x[0], c))))
    })?;
    run("gelu", &mut rng, &mut |r| {
        let s = [dim(r, 1, 6), dim(r, 1, 6)];
        (vec![randn(r, &s)], Box::new(|g, x| Ok(g.gelu(x[0]))))
    })?;
    run("layer_norm", &mut rng, &mut |r| {
        let (m, n) = (dim(r, 1, 5), dim(r, 2, 8));
        (vec![randn(r, &[m, n]), randn(r, &[n]), randn(r, &[n])], Box::new(|g, x| g.layer_norm(x[0], x[1], x[2])))
    })?;
    run("embedding", &mut rng, &mut |r| {
        let (v, d, n) = (dim(r, 2, 7), dim(r, 1, 5), dim(r, 1, 8));
        let ids: Vec<usize> = (0..n).map(|_| r.random_range(0..v)).collect();
        (vec![randn(r, &[v, d])], Box::new(move |g, x| g.embedding(x[0], &ids)))
    })?;
    run("rope", &mut rng, &mut |r| {
        let (batch, seq, heads, half) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 3), dim(r, 1, 3));
        let freqs: Vec<f64> = (0..half).map(|_| r.random_range(0.01..1.5)).collect();
        (vec![randn(r, &[batch * seq, heads * 2 * half])], Box::new(move |g, x| g.rope(x[0], seq, 2 * half, &freqs)))
    })?;
    for (name, causal) in [("attention_causal", true), ("attention_full", false)] {
        run(name, &mut rng, &mut |r| {
            let (batch, seq, heads, dk) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 3), dim(r, 1, 4));
            let s = [batch * seq, heads * dk];
            (
                vec![randn(r, &s), randn(r, &s), randn(r, &s)],
                Box::new(move |g, x| g.attention(x[0], x[1], x[2], batch, seq, heads, causal)),
            )
        })?;
    }
    run("attention_tail", &mut rng, &mut |r| {
        let (batch, seq, heads, dk) = (dim(r, 1, 3), dim(r, 2, 4), dim(r, 1, 2), dim(r, 1, 4));
        let nq = dim(r, 1, seq);
        let s = [batch * seq, heads * dk];
        (
            vec![randn(r, &[batch * nq, heads * dk]), randn(r, &s), randn(r, &s)],
            Box::new(move |g, x| g.attention_tail(x[0], x[1], x[2], batch, seq, heads, true, nq)),
        )
    })?;
    run("select_rows", &mut rng, &mut |r| {
        let (m, n, k) = (dim(r, 1, 6), dim(r, 1, 5), dim(r, 1, 6));
        let rows: Vec<usize> = (0..k).map(|_| r.random_range(0..m)).collect();
        (vec![randn(r, &[m, n])], Box::new(move |g, x| g.select_rows(x[0], &rows)))
    })?;
    run("cross_entropy", &mut rng, &mut |r| {
        let (m, c) = (dim(r, 1, 6), dim(r, 2, 7));
        let targets: Vec<usize> = (0..m).map(|_| r.random_range(0..c)).collect();
        (vec![randn(r, &[m, c])], Box::new(move |g, x| g.cross_entropy(x[0], &targets)))
    })?;
    run("sum", &mut rng, &mut |r| {
        let s = [dim(r, 1, 6), dim(r, 1, 6)];
        (vec![randn(r, &s)], Box::new(|g, x| Ok(g.sum(x[0]))))
    })?;
    Ok(reports)
}

/// Worst relative error of parameter gradients of a whole small Transformer
/// under cross-entropy at the final position.
pub fn check_transformer(seed: u64, use_rope: bool) -> Result<f64> {
    let cfg = TransformerConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        vocab_size: 7,
        seq_len: 3,
        use_rope,
        mlp_mult: 2,
        seed,
        ..TransformerConfig::default()
    };
    let mut model = Transformer::<f64>::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (batch, seq) = (4, 3);
    let tokens: Vec<usize> = (0..batch * seq).map(|_| rng.random_range(0..7)).collect();
    let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..7)).collect();

    let loss_of = |m: &Transformer<f64>| -> Result<(Graph<f64>, NodeId)> {
        let fp = m.forward_graph(&tokens, batch, seq, LogitRows::Last, ProbeMode::None)?;
        let mut g = fp.graph;
        let loss = g.cross_entropy(fp.logits, &targets)?;
        Ok((g, loss))
    };
    let (g, loss) = loss_of(&model)?;
    let grads = g.backward(loss, model.params())?;

    let ids: Vec<_> = model.params().ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = grads.param(id).map(|t| t.data().to_vec());
        let n = model.params().get(id).len();
        for _ in 0..4 {
            let j = rng.random_range(0..n);
            let orig = model.params().get(id).data()[j];
            model.params_mut().get_mut(id).data_mut()[j] = orig + STEP;
            let (gp, lp) = loss_of(&model)?;
            model.params_mut().get_mut(id).data_mut()[j] = orig - STEP;
            let (gm, lm) = loss_of(&model)?;
            model.params_mut().get_mut(id).data_mut()[j] = orig;
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * STEP);
            let a = analytic.as_ref().map_or(0.0, |v| v[j]);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}
