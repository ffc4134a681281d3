use fusenet::autograd::Graph;
use fusenet::dataset::{gen_synthetic, Split, SyntheticSpec};
use fusenet::train::{train, TrainConfig};
use fusenet::zoo::{Cut, FusionStrategy, NetKind, Network, StreamConfig};

fn main() {
    let lr: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let data = gen_synthetic::<f32>(&SyntheticSpec { image_factors: 2, audio_factors: 2, samples_per_class: 200, noise_sigma: 1.0, hw: 32, seed: 0 }).unwrap();
    let cfg = StreamConfig::desk_32(4);
    let mut net = Network::<f32>::build(NetKind::Fusion(FusionStrategy::LateScoreAvg), &cfg, 0).unwrap();
    for ep in 0..6 {
        let tc = TrainConfig { lr, batch_size: 16, epochs: 2, momentum: 0.9, seed: ep, ..TrainConfig::unimodal() };
        let m = train(&mut net, &data, &tc).unwrap();
        let test = data.split(Split::Test);
        let idx: Vec<usize> = (0..8).map(|i| i * 50).collect();
        let (img, spec, labels) = test.batch(&idx);
        let (si, sa) = net.streams();
        let mut g = Graph::new();
        let i = g.input(img).unwrap();
        let s = g.input(spec).unwrap();
        let li = si.unwrap().forward(&mut g, &net.params, i, Cut::Fc8).unwrap();
        let la = sa.unwrap().forward(&mut g, &net.params, s, Cut::Fc8).unwrap();
        let pi = g.softmax(li).unwrap();
        let pa = g.softmax(la).unwrap();
        println!("loss {:?}", m.metrics.iter().map(|r| (r.loss, r.test_accuracy)).collect::<Vec<_>>());
        for r in 0..8 {
            let f = |id| g.value(id).data()[r * 4..r * 4 + 4].iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ");
            println!("  y={} img [{}] aud [{}]", labels[r], f(pi), f(pa));
        }
    }
}
