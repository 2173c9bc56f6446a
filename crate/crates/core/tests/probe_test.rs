use std::time::Instant;

use recon_core::data::{gen_phantom, PhantomSpec};
use recon_core::fourier::fft2c;
use recon_core::metrics::ssim;
use recon_core::model::{
    build_model, reconstruct, train, ModelConfig, ModelKind, TrainHyper, TrainSet, TrainVolume,
};
use recon_core::sampling::make_cartesian_mask;

#[test]
fn probe() {
    let size = 64;
    let mask = make_cartesian_mask(size, size, 4.0, 7).unwrap();
    let mut train_set = TrainSet::default();
    for i in 0..10 {
        let img = gen_phantom(&PhantomSpec::new(8, size, 2, 1000 + i)).unwrap();
        let full = fft2c(&img).unwrap();
        train_set
            .volumes
            .push(TrainVolume::from_masked(&full, &mask).unwrap());
    }
    let mut val_set = TrainSet::default();
    let img = gen_phantom(&PhantomSpec::new(8, size, 2, 2000)).unwrap();
    let full = fft2c(&img).unwrap();
    val_set
        .volumes
        .push(TrainVolume::from_masked(&full, &mask).unwrap());
    let img = gen_phantom(&PhantomSpec::new(8, size, 2, 3000)).unwrap();
    let full = fft2c(&img).unwrap();
    let held = TrainVolume::from_masked(&full, &mask).unwrap();

    let cfg = ModelConfig::toy(ModelKind::Acnn, 1, 2);
    let mut model = build_model(&cfg, 42).unwrap();
    let hyper = TrainHyper::new(30, 9);

    let t0 = Instant::now();
    let out = train(&mut model, &train_set, &val_set, &hyper).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "train 30 epochs x {} samples: {:.1}s total, {:.2}s/epoch",
        train_set.n_samples(),
        dt,
        dt / 30.0
    );
    for e in out.trace.iter().step_by(5) {
        println!("epoch {:>2} train {:.6e} val {:.6e}", e.epoch, e.train, e.validation);
    }
    println!("last epoch train {:.6e} val {:.6e}", out.trace.last().unwrap().train, out.trace.last().unwrap().validation);

    let recon = reconstruct(&model, &held.undersampled).unwrap();
    let zf = held.zero_filled().unwrap();
    let mut s_r = 0.0;
    let mut s_z = 0.0;
    for i in 0..recon.len() {
        s_r += ssim(&recon[i], &held.truth[i]).unwrap();
        s_z += ssim(&zf[i], &held.truth[i]).unwrap();
    }
    println!(
        "held-out mean SSIM: recon {:.6} zero-filled {:.6} (delta {:+.6})",
        s_r / 8.0,
        s_z / 8.0,
        (s_r - s_z) / 8.0
    );
}
