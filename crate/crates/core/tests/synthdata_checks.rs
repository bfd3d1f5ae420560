use memgeom::empirical::{is_separable, Separability};
use memgeom::synthdata::{
    generate_spheres, permute_labels, subset_manifolds, subset_membership, subset_rows, SphereDatasetSpec, Subset,
};
use memgeom::{Error, ManifoldSet};
use nalgebra::DMatrix;

fn spec(radius: f64) -> SphereDatasetSpec {
    SphereDatasetSpec {
        n_classes: 6,
        ambient_dim: 20,
        sphere_dim: 4,
        radius,
        train_per_class: 40,
        test_per_class: 10,
        seed: 5,
    }
}

#[test]
fn points_lie_on_their_spheres() {
    let s = SphereDatasetSpec::full();
    let s = SphereDatasetSpec {
        n_classes: 6,
        train_per_class: 50,
        test_per_class: 5,
        ..s
    };
    let data = generate_spheres(&s).unwrap();
    for class in 0..s.n_classes {
        let c = s.center(class);
        let rows: Vec<usize> = (0..data.n_train()).filter(|&i| data.true_labels()[i] == class).collect();
        let mut offsets = DMatrix::zeros(rows.len(), s.ambient_dim);
        for (k, &i) in rows.iter().enumerate() {
            let x = data.train_inputs().row(i).transpose() - &c;
            assert!((x.norm() - s.radius).abs() < 1e-8);
            offsets.row_mut(k).copy_from(&x.transpose());
        }
        let sv = offsets.singular_values();
        let rank = sv.iter().filter(|&&v| v > 1e-8 * sv.max()).count();
        assert_eq!(rank, s.sphere_dim, "class {class}");
    }
}

fn opposed_pair(radius: f64, k: usize) -> ManifoldSet {
    let data = generate_spheres(&spec(radius)).unwrap();
    let pick = |c: usize| {
        let rows: Vec<usize> = (0..data.n_train()).filter(|&i| data.true_labels()[i] == c).collect();
        data.train_inputs().select_rows(&rows)
    };
    ManifoldSet::new(vec![pick(2 * k), pick(2 * k + 1)], vec![2 * k, 2 * k + 1]).unwrap()
}

#[test]
fn opposed_spheres_separate_only_when_small() {
    for k in 0..3 {
        let (small, _) = is_separable(&opposed_pair(0.5, k), &[1, -1]).unwrap();
        assert_eq!(small, Separability::Separable, "pair {k}");
        let (big, _) = is_separable(&opposed_pair(5.0, k), &[1, -1]).unwrap();
        assert_eq!(big, Separability::NotSeparable, "pair {k}");
    }
}

#[test]
fn permutation_count_and_labels() {
    let base = generate_spheres(&SphereDatasetSpec {
        n_classes: 10,
        train_per_class: 400,
        ..spec(1.0)
    })
    .unwrap();
    for eps in [0.0, 0.1, 0.5, 1.0] {
        let d = permute_labels(&base, eps, 3).unwrap();
        assert_eq!(d.n_permuted(), (eps * d.n_train() as f64).round() as usize);
    }
    // permuted labels are uniform: each class gets ~ n/P of them and ~1/P
    // keep their true label (binomial, 5 sigma)
    let d = permute_labels(&base, 0.5, 9).unwrap();
    let n = d.n_permuted() as f64;
    let p = 0.1;
    let sigma = (n * p * (1.0 - p)).sqrt();
    let rows = subset_rows(&d, Subset::Permuted);
    let same = rows.iter().filter(|(i, l)| d.true_labels()[*i] == *l).count() as f64;
    assert!((same - n * p).abs() < 5.0 * sigma, "{same} vs {}", n * p);
    for c in 0..10 {
        let k = rows.iter().filter(|(_, l)| *l == c).count() as f64;
        assert!((k - n * p).abs() < 5.0 * sigma, "class {c}: {k}");
    }
    // unpermuted examples keep their labels
    for (i, l) in subset_rows(&d, Subset::Unpermuted) {
        assert_eq!(d.true_labels()[i], l);
    }
}

#[test]
fn permutation_replaces_earlier_permutation() {
    let base = generate_spheres(&spec(1.0)).unwrap();
    let once = permute_labels(&base, 0.3, 1).unwrap();
    let twice = permute_labels(&once, 0.3, 1).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn subsets_group_by_the_right_label() {
    let d = permute_labels(&generate_spheres(&spec(1.0)).unwrap(), 0.5, 2).unwrap();
    let restored = subset_membership(&d, Subset::Restored, 2, 3, 0).unwrap();
    for (c, rows) in &restored {
        assert!(rows.iter().all(|&i| d.true_labels()[i] == *c && d.permuted_mask()[i]));
    }
    let permuted = subset_membership(&d, Subset::Permuted, 2, 3, 0).unwrap();
    for (c, rows) in &permuted {
        assert!(rows.iter().all(|&i| d.train_labels()[i] == *c && d.permuted_mask()[i]));
    }
    let test = subset_manifolds(&d, d.test_inputs(), Subset::Test, 6, 10, 0).unwrap();
    assert_eq!(test.len(), 6);
}

#[test]
fn deficient_classes_are_listed() {
    let d = permute_labels(&generate_spheres(&spec(1.0)).unwrap(), 0.5, 2).unwrap();
    match subset_membership(&d, Subset::Permuted, 6, 39, 0) {
        Err(Error::InsufficientExamples { subset, deficient }) => {
            assert_eq!(subset, "permuted");
            assert_eq!(deficient.len(), 6);
        }
        other => panic!("{other:?}"),
    }
    let clean = generate_spheres(&spec(1.0)).unwrap();
    assert!(matches!(
        subset_membership(&clean, Subset::Permuted, 2, 1, 0),
        Err(Error::EmptySubset(_))
    ));
}
