use affconv::Tape;
use affconv_bench::layer_inputs;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const CHANNELS: usize = 16;

fn conv_vs_affconv(c: &mut Criterion) {
    let mut group = c.benchmark_group("layer_fwd_bwd");
    for size in [16, 32, 64] {
        let inp = layer_inputs(CHANNELS, size, 1);
        group.throughput(Throughput::Elements((CHANNELS * size * size) as u64));
        group.bench_with_input(BenchmarkId::new("conv", size), &inp, |b, inp| {
            b.iter(|| {
                let mut t = Tape::<f32>::new();
                let (x, w, bias) = (t.leaf(inp.x.clone()), t.leaf(inp.weight.clone()), t.leaf(inp.bias.clone()));
                let y = t.conv2d(x, w, Some(bias), 1, 1).unwrap();
                let l = t.sum(y).unwrap();
                t.backward(l).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("affconv", size), &inp, |b, inp| {
            b.iter(|| {
                let mut t = Tape::<f32>::new();
                let (x, w, bias) = (t.leaf(inp.x.clone()), t.leaf(inp.weight.clone()), t.leaf(inp.bias.clone()));
                let f = t.leaf(inp.field.clone());
                let y = t.affine_conv2d(x, w, Some(bias), f, 1, 1).unwrap();
                let l = t.sum(y).unwrap();
                t.backward(l).unwrap()
            })
        });
    }
    group.finish();
}

fn bilinear_resize(c: &mut Criterion) {
    let inp = layer_inputs(CHANNELS, 64, 2);
    c.bench_function("resize_bilinear_64_to_128", |b| {
        b.iter(|| {
            let mut t = Tape::<f32>::new();
            let x = t.leaf(inp.x.clone());
            let y = t.resize_bilinear(x, 128, 128).unwrap();
            let l = t.sum(y).unwrap();
            t.backward(l).unwrap()
        })
    });
}

criterion_group!(benches, conv_vs_affconv, bilinear_resize);
criterion_main!(benches);
