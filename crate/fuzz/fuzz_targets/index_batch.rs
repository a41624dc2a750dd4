#![no_main]

use libfuzzer_sys::fuzz_target;
use ttrec_core::init::init_tt_cores;
use ttrec_core::{
    backward_bags, forward_bags, plan_shapes, EmbeddingBagConfig, IndexBatch, InitSpec, Matrix, Pooling,
    TtTable,
};

// Layout: [flags, n_idx, n_off, micro_batch, indices.., offsets.., weights..]
fuzz_target!(|data: &[u8]| {
    let [flags, n_idx, n_off, micro, rest @ ..] = data else {
        return;
    };
    let mut bytes = rest.iter().copied();
    let indices: Vec<u64> = bytes.by_ref().take(*n_idx as usize).map(u64::from).collect();
    let offsets: Vec<usize> = bytes.by_ref().take(*n_off as usize).map(usize::from).collect();
    let weights = (flags & 1 == 1).then(|| {
        bytes
            .by_ref()
            .take(indices.len())
            .map(|b| b as f64 / 16.0 - 8.0)
            .collect::<Vec<_>>()
    });
    let pooling = if flags & 2 == 2 { Pooling::Mean } else { Pooling::Sum };
    let Ok(batch) = IndexBatch::new(indices, offsets, weights, pooling) else {
        return;
    };
    assert_eq!(batch.offsets().len(), batch.num_bags() + 1);
    assert_eq!(*batch.offsets().last().unwrap(), batch.len());

    // 8 x 8 = 64 rows; byte-valued indices above 63 must be rejected, not read.
    let plan = plan_shapes(64, 4, 2, 2, Some(&[8, 8]), Some(&[2, 2])).unwrap();
    let mut table = TtTable::<f64>::zeros(plan).unwrap();
    init_tt_cores(&mut table, &InitSpec::kl_gaussian(4), 0).unwrap();
    let cfg = EmbeddingBagConfig {
        micro_batch: usize::from(*micro).max(1),
        threads: 1 + usize::from(flags >> 6),
    };
    let in_range = batch.validate_rows(64).is_ok();
    match forward_bags(&table, &batch, &cfg, flags & 4 == 4) {
        Ok((out, ctx)) => {
            assert!(in_range);
            assert_eq!(out.rows(), batch.num_bags());
            let grad = Matrix::from_vec(out.rows(), 4, vec![1.0; out.rows() * 4]);
            backward_bags(&table, &batch, &ctx, &grad, &cfg).expect("backward after forward");
        }
        Err(_) => assert!(!in_range),
    }
});
