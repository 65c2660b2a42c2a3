//! Keep K embeddings per learnt task and grow the task-mapper from them.

use dell::buffer::{selective_sample, SupportBuffer};
use dell::mapper::{extend_and_adapt, pretrain_taskmapper, MapperConfig};
use dell::rng;
use ndarray::Array2;
use rand::Rng;

fn main() -> dell::Result<()> {
    let dim = 32;
    let mut r = rng::rng(0);
    // eight toy tasks, each a cloud around its own centre
    let centres: Vec<Vec<f32>> = (0..8).map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let cloud = |c: &[f32], n: usize, r: &mut rng::Rng| {
        Array2::from_shape_fn((n, dim), |(_, j)| c[j] + r.gen_range(-0.3..0.3))
    };
    let classes: Vec<_> = centres.iter().map(|c| cloud(c, 40, &mut r)).collect();
    let mut mapper = pretrain_taskmapper(&classes, &MapperConfig { episodes: 200, max_way: 8, ..Default::default() }, 0)?;

    let mut buffer = SupportBuffer::new(5, dim);
    for (task, c) in centres.iter().enumerate().take(4) {
        let collected = cloud(c, 200, &mut r);
        let kept = selective_sample(collected.view(), buffer.k(), task as u64)?;
        buffer = buffer.merge(task, kept.view())?;
        mapper = extend_and_adapt(&mapper, &buffer)?;
        println!("after task {task}: {} entries, {} bytes, mapper knows {} tasks", buffer.len(), buffer.size_bytes(), mapper.n_classes());
    }
    for (task, c) in centres.iter().enumerate().take(4) {
        let (class, confidence) = mapper.infer_task(cloud(c, 8, &mut r).view())?;
        println!("probe of task {task} -> class {class} ({confidence:.2})");
    }
    Ok(())
}
