//! Independent oracles shared by the integration suites: central finite
//! differences and direct loop implementations of the layer kernels.
#![allow(dead_code)]

use fusenet::autograd::{init, Graph, LrnParams, NodeId, Params, Tensor};
use fusenet::zoo::{NetKind, Network, StreamConfig};
use rand::Rng;

/// Relative-error bound for every gradient check.
pub const GRAD_TOL: f64 = 1e-3;
/// Below this magnitude both gradients count as zero.
pub const GRAD_FLOOR: f64 = 1e-7;
/// Relative central-difference step. Small enough that a probe rarely
/// carries a ReLU or max-pool input across its kink, large enough that f64
/// rounding stays near 1e-10.
pub const FD_STEP: f64 = 1e-6;
/// Minimum number of coordinates probed per check.
pub const GRAD_PICKS: usize = 20;

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, v).unwrap()
}

/// Random values with magnitude in `[0.1, 1)`, keeping clear of ReLU's kink.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < GRAD_FLOOR {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub probes: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.probes >= GRAD_PICKS && self.worst <= GRAD_TOL
    }
}

/// Compares `analytic` against central differences of `eval` at `picks`
/// random coordinates, visiting every parameter at least once.
pub fn fd_check(
    name: &str,
    params: &Params<f64>,
    analytic: &[(String, Vec<f64>)],
    eval: &dyn Fn(&Params<f64>) -> f64,
    picks: usize,
    rng: &mut impl Rng,
) -> GradReport {
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut probes: Vec<(String, usize)> = Vec::new();
    for n in &names {
        let len = params.tensor(n).unwrap().numel();
        probes.push((n.clone(), rng.random_range(0..len)));
    }
    while probes.len() < picks {
        let n = &names[rng.random_range(0..names.len())];
        let len = params.tensor(n).unwrap().numel();
        probes.push((n.clone(), rng.random_range(0..len)));
    }
    let mut work = params.clone();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for (n, i) in &probes {
        let x = params.tensor(n).unwrap().data()[*i];
        let h = FD_STEP * (x.abs() + 1.0);
        work.get_mut(n).unwrap().tensor.data_mut()[*i] = x + h;
        let up = eval(&work);
        work.get_mut(n).unwrap().tensor.data_mut()[*i] = x - h;
        let down = eval(&work);
        work.get_mut(n).unwrap().tensor.data_mut()[*i] = x;
        let numeric = (up - down) / (2.0 * h);
        let exact = analytic
            .iter()
            .find(|(m, _)| m == n)
            .map(|(_, g)| g[*i])
            .unwrap_or(0.0);
        let e = rel_err(exact, numeric);
        if e > worst || worst_at.is_empty() {
            worst = worst.max(e);
            worst_at = format!("{n}[{i}] analytic {exact:.6e} numeric {numeric:.6e}");
        }
    }
    GradReport {
        name: name.to_string(),
        probes: probes.len(),
        worst,
        worst_at,
    }
}

type Build = dyn for<'a> Fn(&mut Graph<'a, f64>, &'a Params<f64>) -> NodeId;

/// Gradient check of a graph whose every leaf is a parameter of `params`.
pub fn check_graph(name: &str, params: Params<f64>, build: &Build, rng: &mut impl Rng) -> GradReport {
    let eval = |p: &Params<f64>| {
        let mut g = Graph::new();
        let loss = build(&mut g, p);
        g.value(loss).data()[0]
    };
    let grads = {
        let mut g = Graph::new();
        let loss = build(&mut g, &params);
        g.backward(loss).unwrap();
        g.param_grads()
    };
    fd_check(name, &params, &grads, &eval, GRAD_PICKS, rng)
}

fn params_of(entries: Vec<(&str, Tensor<f64>)>) -> Params<f64> {
    let mut p = Params::new();
    for (n, t) in entries {
        p.insert(n, t).unwrap();
    }
    p
}

/// Reduces `out` to a scalar through a fixed random projection so every
/// output element carries a distinct weight.
fn project<'a>(g: &mut Graph<'a, f64>, p: &'a Params<f64>, out: NodeId) -> NodeId {
    let r = g.param(p, "proj").unwrap();
    let m = g.mul(out, r).unwrap();
    g.sum(m).unwrap()
}

/// One finite-difference check per differentiable op.
pub fn op_gradient_suite(seed: u64) -> Vec<GradReport> {
    let mut rng = init::rng(seed);
    let mut out = Vec::new();
    let strong = LrnParams {
        local_size: 3,
        k: 1.0,
        alpha: 1.5,
        beta: 0.75,
    };

    let p = params_of(vec![
        ("x", random(&[2, 3, 7, 7], &mut rng)),
        ("w", random(&[4, 3, 3, 3], &mut rng)),
        ("b", random(&[4], &mut rng)),
        ("proj", random(&[2, 4, 4, 4], &mut rng)),
    ]);
    out.push(check_graph(
        "conv2d",
        p,
        &|g, p| {
            let (x, w, b) = (g.param(p, "x").unwrap(), g.param(p, "w").unwrap(), g.param(p, "b").unwrap());
            let y = g.conv2d(x, w, b, 2, 1).unwrap();
            project(g, p, y)
        },
        &mut rng,
    ));

    let p = params_of(vec![
        ("x", random(&[1, 2, 8, 8], &mut rng)),
        ("proj", random(&[1, 2, 3, 3], &mut rng)),
    ]);
    out.push(check_graph(
        "maxpool2d",
        p,
        &|g, p| {
            let x = g.param(p, "x").unwrap();
            let y = g.maxpool2d(x, 3, 2).unwrap();
            project(g, p, y)
        },
        &mut rng,
    ));

    let p = params_of(vec![
        ("x", away_from_zero(&[3, 5], &mut rng)),
        ("proj", random(&[3, 5], &mut rng)),
    ]);
    out.push(check_graph(
        "relu",
        p,
        &|g, p| {
            let x = g.param(p, "x").unwrap();
            let y = g.relu(x).unwrap();
            project(g, p, y)
        },
        &mut rng,
    ));

    for (label, params) in [("lrn", strong), ("lrn-default", LrnParams::default())] {
        let p = params_of(vec![
            ("x", random(&[1, 6, 3, 3], &mut rng)),
            ("proj", random(&[1, 6, 3, 3], &mut rng)),
        ]);
        out.push(check_graph(
            label,
            p,
            &move |g, p| {
                let x = g.param(p, "x").unwrap();
                let y = g.lrn(x, params).unwrap();
                project(g, p, y)
            },
            &mut rng,
        ));
    }

    let p = params_of(vec![
        ("x", random(&[3, 6], &mut rng)),
        ("w", random(&[4, 6], &mut rng)),
        ("b", random(&[4], &mut rng)),
        ("proj", random(&[3, 4], &mut rng)),
    ]);
    out.push(check_graph(
        "fully_connected",
        p,
        &|g, p| {
            let (x, w, b) = (g.param(p, "x").unwrap(), g.param(p, "w").unwrap(), g.param(p, "b").unwrap());
            let y = g.fully_connected(x, w, b).unwrap();
            project(g, p, y)
        },
        &mut rng,
    ));

    let p = params_of(vec![
        ("x", random(&[2, 3, 2, 2], &mut rng)),
        ("proj", random(&[2, 12], &mut rng)),
    ]);
    out.push(check_graph(
        "flatten",
        p,
        &|g, p| {
            let x = g.param(p, "x").unwrap();
            let y = g.flatten(x).unwrap();
            project(g, p, y)
        },
        &mut rng,
    ));

    for axis in [1usize, 3] {
        let mut rhs = vec![2, 2, 3, 2];
        rhs[axis] += 1;
        let mut both = vec![2, 2, 3, 2];
        both[axis] = 2 + rhs[axis];
        let p = params_of(vec![
            ("a", random(&[2, 2, 3, 2], &mut rng)),
            ("b", random(&rhs, &mut rng)),
            ("proj", random(&both, &mut rng)),
        ]);
        out.push(check_graph(
            if axis == 1 { "concat-channels" } else { "concat-width" },
            p,
            &move |g, p| {
                let (a, b) = (g.param(p, "a").unwrap(), g.param(p, "b").unwrap());
                let y = g.concat(a, b, axis).unwrap();
                project(g, p, y)
            },
            &mut rng,
        ));
    }

    let p = params_of(vec![
        ("a", random(&[3, 4], &mut rng)),
        ("b", random(&[3, 4], &mut rng)),
        ("proj", random(&[3, 4], &mut rng)),
    ]);
    out.push(check_graph(
        "add-mul-scale",
        p,
        &|g, p| {
            let (a, b) = (g.param(p, "a").unwrap(), g.param(p, "b").unwrap());
            let s = g.add(a, b).unwrap();
            let m = g.mul(s, a).unwrap();
            let y = g.scale(m, 0.7).unwrap();
            project(g, p, y)
        },
        &mut rng,
    ));

    let p = params_of(vec![
        ("x", random(&[3, 5], &mut rng)),
        ("proj", random(&[3, 5], &mut rng)),
    ]);
    out.push(check_graph(
        "softmax",
        p,
        &|g, p| {
            let x = g.param(p, "x").unwrap();
            let y = g.softmax(x).unwrap();
            project(g, p, y)
        },
        &mut rng,
    ));

    let mut p = params_of(vec![("x", random(&[4, 5], &mut rng))]);
    p.get_mut("x").unwrap().tensor.data_mut()[0] *= 3.0;
    out.push(check_graph(
        "cross_entropy",
        p,
        &|g, p| {
            let x = g.param(p, "x").unwrap();
            g.cross_entropy(x, &[0, 4, 2, 2]).unwrap()
        },
        &mut rng,
    ));

    let p = params_of(vec![("a", random(&[3, 4], &mut rng)), ("b", random(&[3, 4], &mut rng))]);
    out.push(check_graph(
        "mixture_nll",
        p,
        &|g, p| {
            let (a, b) = (g.param(p, "a").unwrap(), g.param(p, "b").unwrap());
            g.mixture_nll(a, b, &[1, 3, 0]).unwrap()
        },
        &mut rng,
    ));
    out
}

/// Gradient check of a whole network's training loss.
pub fn net_gradient_check(kind: NetKind, cfg: &StreamConfig, seed: u64) -> GradReport {
    let mut rng = init::rng(seed);
    let net = Network::<f64>::build(kind, cfg, seed).unwrap();
    let [c, h, w] = net.input_shape();
    let img = random(&[2, c, h, w], &mut rng);
    let spec = random(&[2, c, h, w], &mut rng);
    let labels = [1usize, cfg.class_count() - 1];
    let loss_of = |n: &Network<f64>, backward: bool| {
        let mut g = Graph::new();
        let i = g.input_ref(&img).unwrap();
        let s = g.input_ref(&spec).unwrap();
        let out = n.forward(&mut g, i, s).unwrap();
        let loss = n.loss(&mut g, &out, &labels).unwrap();
        let value = g.value(loss).data()[0];
        let grads = if backward {
            g.backward(loss).unwrap();
            g.param_grads()
        } else {
            Vec::new()
        };
        (value, grads)
    };
    let (_, grads) = loss_of(&net, true);
    let eval = |p: &Params<f64>| {
        let mut n = net.clone();
        n.params = p.clone();
        loss_of(&n, false).0
    };
    fd_check(kind.name(), &net.params, &grads, &eval, 2 * GRAD_PICKS, &mut rng)
}

// Direct loop implementations, written from the layer definitions alone.

/// Six nested loops over output position, kernel, channel and window.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for s in 0..n {
        for o in 0..k {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[o];
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(&[s, ch, iy as usize, ix as usize]) * w.at(&[o, ch, i, j]);
                            }
                        }
                    }
                    out[((s * k + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, k, oh, ow], out).unwrap()
}

pub fn naive_maxpool(x: &Tensor<f64>, k: usize, stride: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for s in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..k {
                        for j in 0..k {
                            m = m.max(x.at(&[s, ch, y * stride + i, xx * stride + j]));
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out).unwrap()
}

/// `b[c] = a[c] / (k + alpha/n * sum a[c']^2)^beta` over the clipped
/// channel window centered on `c`.
pub fn naive_lrn(x: &Tensor<f64>, p: &LrnParams) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let half = p.local_size / 2;
    let mut out = vec![0.0; x.numel()];
    for s in 0..n {
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for y in 0..h {
                for xx in 0..w {
                    let sq: f64 = (lo..=hi).map(|q| x.at(&[s, q, y, xx]).powi(2)).sum();
                    let denom = (p.k + p.alpha / p.local_size as f64 * sq).powf(p.beta);
                    out[((s * c + ch) * h + y) * w + xx] = x.at(&[s, ch, y, xx]) / denom;
                }
            }
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst deviation of each kernel from its loop oracle over `cases`
/// random small shapes: (conv2d, maxpool2d, lrn).
pub fn kernel_oracle_sweep(cases: usize, seed: u64) -> (f64, f64, f64) {
    use fusenet::autograd::kernels;
    let mut rng = init::rng(seed);
    let (mut conv, mut pool, mut lrn) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = rng.random_range(1..=3);
        let c = rng.random_range(1..=4);
        let h = rng.random_range(3..=9);
        let w = rng.random_range(3..=9);
        let x = random(&[n, c, h, w], &mut rng);

        let k = rng.random_range(1..=4);
        let kh = rng.random_range(1..=3.min(h));
        let kw = rng.random_range(1..=3.min(w));
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..=2);
        let wt = random(&[k, c, kh, kw], &mut rng);
        let b = random(&[k], &mut rng);
        let got = kernels::conv2d(&x, &wt, &b, stride, pad).unwrap();
        conv = conv.max(max_abs_diff(&got, &naive_conv2d(&x, &wt, &b, stride, pad)));

        let pk = rng.random_range(1..=h.min(w).min(4));
        let ps = rng.random_range(1..=3);
        let (got, _) = kernels::maxpool2d(&x, pk, ps).unwrap();
        pool = pool.max(max_abs_diff(&got, &naive_maxpool(&x, pk, ps)));

        let params = LrnParams {
            local_size: [1, 3, 5][rng.random_range(0..3)],
            k: rng.random_range(0.0..2.0),
            alpha: rng.random_range(0.01..2.0),
            beta: rng.random_range(0.25..1.0),
        };
        // keep the denominator away from zero when k is tiny
        let x = away_from_zero(&[n, c, h, w], &mut rng);
        let (got, _) = kernels::lrn(&x, &params).unwrap();
        lrn = lrn.max(max_abs_diff(&got, &naive_lrn(&x, &params)));
    }
    (conv, pool, lrn)
}
