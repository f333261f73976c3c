use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toolkin_core::env::{Action, EnvSpec, Simulator};
use toolkin_core::kinematics::solve_ik;
use toolkin_core::rl::Mlp;
use toolkin_core::{IkSettings, KinematicChain};

fn kinematics(c: &mut Criterion) {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = chain.random_angles(&mut rng);
    c.bench_function("forward_kinematics", |b| b.iter(|| chain.forward(black_box(&q))));
    c.bench_function("jacobian", |b| b.iter(|| chain.jacobian(black_box(&q))));

    let target = chain.forward(&chain.random_angles(&mut rng));
    let settings = IkSettings { restarts: 0, ..IkSettings::default() };
    c.bench_function("ik_from_home", |b| b.iter(|| solve_ik(&chain, black_box(&target), &chain.home(), &settings)));
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::new(&[30, 64, 64, 7], 1.0, &mut rng);
    let x = vec![0.1; 30];
    let batch = vec![0.1; 30 * 64];
    c.bench_function("mlp_forward_1", |b| b.iter(|| net.forward(black_box(&x))));
    c.bench_function("mlp_forward_64", |b| b.iter(|| net.forward_batch(black_box(&batch), 64)));
    c.bench_function("mlp_backward_64", |b| {
        let tape = net.forward_batch(&batch, 64).unwrap();
        let d_out = vec![1.0; 7 * 64];
        b.iter(|| {
            let mut grad = vec![0.0; net.num_params()];
            net.backward(black_box(&tape), &d_out, &mut grad)
        })
    });
}

fn environment(c: &mut Criterion) {
    let sim = Simulator::new(EnvSpec::default()).unwrap();
    let state = sim.reset(0);
    let action = Action::from_slice(&[0.5, 0.2, -0.1, 0.0, 0.0, 0.0, 0.0]).unwrap();
    c.bench_function("env_step", |b| b.iter(|| sim.step(black_box(&state), &action)));
}

criterion_group!(benches, kinematics, network, environment);
criterion_main!(benches);
