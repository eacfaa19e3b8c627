mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use zonepred_core::matrix::{
    build_hankel, build_mosaic_hankel, build_page, min_singular_value, pe_check, sequence, stack_blocks,
    PeStructure, RankTolerance,
};
use zonepred_core::series::{ChannelCounts, Trajectory};

use common::{gaussian_matrix, gaussian_vector, rank_by_elimination, rng, StateSpace};

fn data(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_segment_mosaic_is_hankel((z, depth) in (1usize..4, 1usize..30).prop_flat_map(|(m, t)| (data(m, t), 1..=t))) {
        let h = build_hankel(&z, depth).unwrap();
        let mosaic = build_mosaic_hankel(std::slice::from_ref(&z), depth).unwrap();
        prop_assert_eq!(h.shape(), mosaic.shape());
        prop_assert!(h.iter().zip(mosaic.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn page_columns_partition_the_samples(t in 1usize..200, depth in 1usize..20) {
        prop_assume!(t >= depth);
        let z = sequence(&(0..t).map(|i| i as f64).collect::<Vec<_>>());
        let page = build_page(&z, depth).unwrap();
        prop_assert_eq!(page.ncols(), t / depth);
        let mut seen: Vec<usize> = page.iter().map(|&v| v as usize).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..depth * (t / depth)).collect::<Vec<_>>());
    }

    #[test]
    fn hankel_entries_follow_the_definition((z, depth) in (1usize..4, 1usize..25).prop_flat_map(|(m, t)| (data(m, t), 1..=t))) {
        let m = z.nrows();
        let h = build_hankel(&z, depth).unwrap();
        prop_assert_eq!(h.shape(), (depth * m, z.ncols() - depth + 1));
        for j in 0..h.ncols() {
            for step in 0..depth {
                for c in 0..m {
                    prop_assert_eq!(h[(step * m + c, j)], z[(c, j + step)]);
                }
            }
        }
    }

    #[test]
    fn stack_row_count_formula(
        t_ini in 0usize..6,
        t_f in 1usize..8,
        mu in 1usize..3,
        mw in 1usize..3,
        p in 1usize..3,
        width in 1usize..6,
    ) {
        let len = t_ini + t_f;
        let counts = ChannelCounts::new(mu, mw, p);
        let block = |n: usize, seed: usize| (0..n).map(|c| (0..len).map(|t| (seed * 100 + c * 10 + t) as f64).collect()).collect();
        let trajectories: Vec<Trajectory> = (0..width)
            .map(|j| Trajectory {
                source_start_index: j,
                u_block: block(mu, 3 * j),
                w_block: block(mw, 3 * j + 1),
                y_block: block(p, 3 * j + 2),
                end_time: j as i64,
            })
            .collect();
        let stack = stack_blocks(&trajectories, t_ini, t_f, counts).unwrap();
        prop_assert_eq!(stack.rows(), len * (mu + mw + p));
        prop_assert_eq!(stack.width(), width);
        prop_assert_eq!(stack.known().nrows(), t_ini * (mu + mw + p) + t_f * (mu + mw));
        prop_assert_eq!(stack.future_outputs().nrows(), t_f * p);
        for (j, tr) in trajectories.iter().enumerate() {
            let (u, w, y) = stack.split_column(j);
            prop_assert_eq!(&u, &tr.u_block);
            prop_assert_eq!(&w, &tr.w_block);
            prop_assert_eq!(&y, &tr.y_block);
        }
    }
}

#[test]
fn white_noise_is_persistently_exciting() {
    let mut r = rng(3);
    let u = gaussian_matrix(&mut r, 1, 50);
    let verdict = pe_check(std::slice::from_ref(&u), 4, PeStructure::Hankel, RankTolerance::default()).unwrap();
    let h = build_hankel(&u, 4).unwrap();
    assert_eq!(rank_by_elimination(&h, 1e-10), 4);
    assert!(verdict.satisfied);
    assert_eq!(verdict.rank, 4);
    assert_eq!(verdict.min_t, 7);
}

#[test]
fn impulse_rank_matches_elimination() {
    for (values, rank) in [([0.0, 0.0, 1.0, 0.0, 0.0], 2), ([1.0, 0.0, 0.0, 0.0, 0.0], 1)] {
        let z = sequence(&values);
        let h = build_hankel(&z, 2).unwrap();
        let verdict = pe_check(&[z], 2, PeStructure::Hankel, RankTolerance::default()).unwrap();
        assert_eq!(verdict.rank, rank_by_elimination(&h, 1e-12));
        assert_eq!(verdict.rank, rank);
        assert_eq!(verdict.min_t, 3);
    }
}

#[test]
fn constant_input_is_never_exciting() {
    let z = sequence(&[2.5; 40]);
    let verdict = pe_check(&[z], 2, PeStructure::Hankel, RankTolerance::default()).unwrap();
    assert_eq!(verdict.rank, 1);
    assert!(!verdict.satisfied);
}

#[test]
fn mosaic_rank_over_segments() {
    let mut r = rng(4);
    let segments: Vec<DMatrix<f64>> = [12, 9, 15].iter().map(|&t| gaussian_matrix(&mut r, 2, t)).collect();
    let verdict = pe_check(&segments, 3, PeStructure::MosaicHankel, RankTolerance::default()).unwrap();
    let mosaic = build_mosaic_hankel(&segments, 3).unwrap();
    assert_eq!(mosaic.ncols(), 10 + 7 + 13);
    assert_eq!(verdict.rank, rank_by_elimination(&mosaic, 1e-10));
    assert!(verdict.satisfied);
}

/// Every trajectory of a random LTI system lies in the span of a deep
/// enough Hankel matrix of one exciting experiment.
#[test]
fn lti_trajectories_lie_in_the_hankel_span() {
    let mut r = rng(5);
    for (order, inputs, depth) in [(2, 1, 8), (3, 2, 10), (4, 1, 12)] {
        let sys = StateSpace::random(&mut r, order, inputs, 1, 0.8);
        let t = 4 * (inputs + 1) * depth + order;
        let u = gaussian_matrix(&mut r, inputs, t);
        let y = sys.simulate(&u, &gaussian_vector(&mut r, order));
        let m = inputs + 1;
        let mut w = DMatrix::zeros(m, t);
        w.rows_mut(0, inputs).copy_from(&u);
        w.rows_mut(inputs, 1).copy_from(&y);
        let h = build_hankel(&w, depth).unwrap();
        assert_eq!(rank_by_elimination(&h, 1e-9), inputs * depth + order);

        let uf = gaussian_matrix(&mut r, inputs, depth);
        let yf = sys.simulate(&uf, &gaussian_vector(&mut r, order));
        let v = DVector::from_fn(m * depth, |i, _| {
            let (step, c) = (i / m, i % m);
            if c < inputs {
                uf[(c, step)]
            } else {
                yf[(0, step)]
            }
        });
        let svd = h.clone().svd(true, true);
        let g = svd.solve(&v, 1e-10 * svd.singular_values[0]).unwrap();
        assert!((&h * g - v).norm() <= 1e-8);
    }
}

#[test]
fn singular_value_examples() {
    assert!((min_singular_value(&DMatrix::identity(3, 3)) - 1.0).abs() < 1e-12);
    assert!((min_singular_value(&DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0])) - 3.0).abs() < 1e-12);
    let repeated = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    assert!(min_singular_value(&repeated) < 1e-12);
}

#[test]
fn stack_of_181_windows_has_540_rows() {
    let counts = ChannelCounts::new(2, 2, 1);
    let block = |n: usize| vec![vec![0.5; 108]; n];
    let trajectories: Vec<Trajectory> = (0..181)
        .map(|j| Trajectory {
            source_start_index: j,
            u_block: block(2),
            w_block: block(2),
            y_block: block(1),
            end_time: j as i64,
        })
        .collect();
    let stack = stack_blocks(&trajectories, 12, 96, counts).unwrap();
    assert_eq!((stack.rows(), stack.width()), (540, 181));
}
