use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use granola_core::context::sample_rnf;
use granola_core::graph::{batch_graphs, csl, erdos_renyi, wl_refinement};
use granola_core::mpnn::{Activation, GnnKind, LayerSpec, NormChoice, Pooling};
use granola_core::{
    reference, ForwardCtx, GranolaVariant, Graph, GraphBatch, NormSpec, NormVariant, ParamStore, RnfSource, StackSpec,
    Tape, Tensor,
};

fn normal_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn random_graphs(seed: u64, c: usize) -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..=3);
    (0..b)
        .map(|_| {
            let n = rng.random_range(1..=7);
            let g = erdos_renyi(n, 0.4, rng.random()).unwrap();
            Graph::with_features(n, g.edges().to_vec(), normal_tensor(&mut rng, vec![n, c])).unwrap()
        })
        .collect()
}

fn shuffled(seed: u64, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn permute_rows(t: &Tensor, perms: &[Vec<usize>]) -> Tensor {
    let (n_max, c) = (t.shape()[1], t.shape()[2]);
    let mut out = Tensor::zeros(t.shape().to_vec());
    for (b, p) in perms.iter().enumerate() {
        for (i, &j) in p.iter().enumerate() {
            for k in 0..c {
                out.set(&[b, j, k], t.data()[(b * n_max + i) * c + k]);
            }
        }
    }
    out
}

fn stack(norm: NormChoice, c: usize) -> StackSpec {
    let layer = |gnn| LayerSpec {
        gnn,
        width: c,
        norm: norm.clone(),
        activation: Activation::Relu,
    };
    StackSpec {
        input_width: c,
        layers: vec![layer(GnnKind::Gin), layer(GnnKind::Graphconv)],
        pooling: Pooling::None,
        readout: None,
        rnf_pe: 0,
    }
}

fn node_output(spec: &StackSpec, seed: u64, batch: &GraphBatch, rnf: RnfSource) -> Tensor {
    let mut store = ParamStore::new();
    let s = spec.build(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let tape = Tape::new();
    let ctx = ForwardCtx::inference(&tape, &store, rnf);
    (*s.forward(&ctx, batch).unwrap().node.value()).clone()
}

fn norm_choices() -> Vec<NormChoice> {
    let mut out: Vec<NormChoice> = NormVariant::ALL.iter().map(|&v| NormChoice::Zoo(NormSpec::new(v))).collect();
    for v in [GranolaVariant::Full, GranolaVariant::NoRnf, GranolaVariant::Ms, GranolaVariant::RnfNorm] {
        out.push(NormChoice::granola(v));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = normal_tensor(&mut rng, vec![3, 4]);
        let w0 = normal_tensor(&mut rng, vec![4, 2]);
        let grad = |ca: f64, cb: f64| {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let w = tape.leaf(w0.clone());
            let f = x.linear(w).unwrap().relu().sum_all();
            let g = x.square().mul(x).unwrap().sum_all();
            let y = f.scale(ca).add(g.scale(cb)).unwrap();
            y.backward().unwrap().get(x)
        };
        let combined = grad(a, b);
        let separate = grad(1.0, 0.0).scale(a).zip_map(&grad(0.0, 1.0).scale(b), |p, q| p + q).unwrap();
        prop_assert!(combined.max_abs_diff(&separate) < 1e-12);
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), which in 0usize..16) {
        let graphs = random_graphs(seed, 3);
        let batch = batch_graphs(&graphs).unwrap();
        let spec = stack(norm_choices()[which].clone(), 3);
        let a = node_output(&spec, seed, &batch, RnfSource::Seeded { root: seed, step: 2 });
        let b = node_output(&spec, seed, &batch, RnfSource::Seeded { root: seed, step: 2 });
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn stacks_are_permutation_equivariant(seed in any::<u64>(), which in 0usize..16) {
        let c = 3;
        let graphs = random_graphs(seed, c);
        let perms: Vec<Vec<usize>> =
            graphs.iter().enumerate().map(|(i, g)| shuffled(seed ^ i as u64, g.num_nodes())).collect();
        let moved: Vec<Graph> = graphs.iter().zip(&perms).map(|(g, p)| g.permute(p).unwrap()).collect();
        let batch = batch_graphs(&graphs).unwrap();
        let moved_batch = batch_graphs(&moved).unwrap();
        let rnf: BTreeMap<usize, Tensor> = (1..=2).map(|slot| (slot, sample_rnf(&batch, c, seed ^ slot as u64))).collect();
        let moved_rnf = rnf.iter().map(|(&s, r)| (s, permute_rows(r, &perms))).collect();
        let spec = stack(norm_choices()[which].clone(), c);
        let base = node_output(&spec, seed, &batch, RnfSource::Fixed(rnf));
        let other = node_output(&spec, seed, &moved_batch, RnfSource::Fixed(moved_rnf));
        prop_assert!(permute_rows(&base, &perms).max_abs_diff(&other) < 1e-9);
    }

    #[test]
    fn stack_matches_layerwise_reference(seed in any::<u64>(), which in 0usize..16) {
        let c = 3;
        let batch = batch_graphs(&random_graphs(seed, c)).unwrap();
        let rnf: BTreeMap<usize, Tensor> = (1..=2).map(|slot| (slot, sample_rnf(&batch, c, seed ^ slot as u64))).collect();
        let spec = stack(norm_choices()[which].clone(), c);
        let mut store = ParamStore::new();
        let s = spec.build(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let tape = Tape::new();
        let ctx = ForwardCtx::inference(&tape, &store, RnfSource::Fixed(rnf.clone()));
        let got = (*s.forward(&ctx, &batch).unwrap().node.value()).clone();
        let want = reference::stack_forward(&store, &s, &batch, &rnf);
        prop_assert!(got.max_abs_diff(&want) < 1e-9);
    }

    #[test]
    fn padding_stays_zero(seed in any::<u64>(), extra in 0usize..4, which in 0usize..16) {
        let graphs = random_graphs(seed, 2);
        let n_max = graphs.iter().map(|g| g.num_nodes()).max().unwrap() + extra;
        let batch = GraphBatch::with_padding(&graphs, n_max).unwrap();
        let out = node_output(&stack(norm_choices()[which].clone(), 2), seed, &batch, RnfSource::Seeded { root: seed, step: 0 });
        let mask = batch.node_mask();
        for (i, v) in out.data().iter().enumerate() {
            if !mask[i / 2] {
                prop_assert_eq!(*v, 0.0);
            }
        }
        for (i, v) in batch.features().data().iter().enumerate() {
            if !mask[i / 2] {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn wl_colors_ignore_node_order(seed in any::<u64>(), n in 2usize..12) {
        let g = erdos_renyi(n, 0.3, seed).unwrap();
        let p = shuffled(seed.wrapping_add(1), n);
        prop_assert_eq!(wl_refinement(&g, None), wl_refinement(&g.permute(&p).unwrap(), None));
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), n in 1usize..30, p in 0.0f64..1.0) {
        let a = erdos_renyi(n, p, seed).unwrap();
        let b = erdos_renyi(n, p, seed).unwrap();
        prop_assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn csl_is_four_regular(n in 6usize..30, skip in 2usize..10) {
        prop_assume!(skip <= n - 2 && 2 * skip != n);
        let g = csl(n, skip).unwrap();
        prop_assert_eq!(g.num_edges(), 2 * n);
        prop_assert!(g.degrees().iter().all(|&d| d == 4));
    }
}
