use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use vwc_core::device::{DeviceSource, RawInput, StylusState};
use vwc_core::geometry::{Pose, Vec3};
use vwc_core::servo::{servo_tick, ConstraintModel, ForceLaw, ServoConfig, ServoLoop};

fn servo(c: &mut Criterion) {
    let model = ConstraintModel::plane(Vec3::new(0.0, 0.0, 10.0), Vec3::new(0.0, 0.0, -1.0), ForceLaw::default());
    let stylus = StylusState {
        pose: Pose::from_translation(Vec3::new(1.0, 2.0, 12.5)),
        ..StylusState::default()
    };
    c.bench_function("servo_tick", |b| b.iter(|| servo_tick(black_box(&stylus), black_box(&model))));

    let (source, cell) = DeviceSource::external();
    cell.store(RawInput {
        pose: Pose::from_translation(Vec3::new(1.0, 2.0, 12.5)),
        ..RawInput::default()
    });
    let mut servo = ServoLoop::new(ServoConfig::default(), source);
    servo.set_model(model);
    let mut t = 0.0;
    c.bench_function("servo_loop_tick", |b| {
        b.iter(|| {
            t += 1.0;
            servo.tick(black_box(t))
        })
    });
}

criterion_group!(benches, servo);
criterion_main!(benches);
