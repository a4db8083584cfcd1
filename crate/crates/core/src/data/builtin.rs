//! Datasets bundled with the crate.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};

use super::{read_csv, ColumnKind, Dataset, Schema};
use crate::error::Result;

const GLASS_CSV: &str = include_str!("../../data/glass.csv");

/// Glass identification data: 214 samples, 9 numeric features and a
/// six-valued `type` column used as the class label.
pub fn glass() -> Result<Dataset> {
    let schema = Schema {
        target: Some("type".into()),
        categorical: vec!["type".into()],
    };
    read_csv(GLASS_CSV.as_bytes(), &schema)
}

const CELLS: [&str; 3] = ["x", "o", "b"];
const LINES: [[usize; 3]; 8] = [
    [0, 1, 2],
    [3, 4, 5],
    [6, 7, 8],
    [0, 3, 6],
    [1, 4, 7],
    [2, 5, 8],
    [0, 4, 8],
    [2, 4, 6],
];

fn winner(board: &[u8; 9]) -> Option<u8> {
    LINES
        .iter()
        .find(|l| board[l[0]] != 2 && board[l[0]] == board[l[1]] && board[l[1]] == board[l[2]])
        .map(|l| board[l[0]])
}

fn collect_endings(board: &mut [u8; 9], to_move: u8, out: &mut BTreeSet<[u8; 9]>) {
    if winner(board).is_some() || board.iter().all(|&c| c != 2) {
        out.insert(*board);
        return;
    }
    for cell in 0..9 {
        if board[cell] == 2 {
            board[cell] = to_move;
            collect_endings(board, 1 - to_move, out);
            board[cell] = 2;
        }
    }
}

/// Every distinct final board of a tic-tac-toe game where `x` moves first.
/// Cells are encoded `x = 0`, `o = 1`, `b = 2` (blank); the target is 1 when
/// `x` has three in a row.
pub fn tictactoe() -> Dataset {
    let mut endings = BTreeSet::new();
    collect_endings(&mut [2; 9], 0, &mut endings);
    let n = endings.len();
    let mut x = Array2::zeros((n, 9));
    let mut y = Array1::zeros(n);
    for (i, board) in endings.iter().enumerate() {
        for (j, &c) in board.iter().enumerate() {
            x[[i, j]] = f64::from(c);
        }
        y[i] = f64::from(u8::from(winner(board) == Some(0)));
    }
    let positions = [
        "top-left",
        "top-middle",
        "top-right",
        "middle-left",
        "middle-middle",
        "middle-right",
        "bottom-left",
        "bottom-middle",
        "bottom-right",
    ];
    let cells: Vec<String> = CELLS.iter().map(|s| s.to_string()).collect();
    let encodings: BTreeMap<String, Vec<String>> = positions
        .iter()
        .map(|p| (p.to_string(), cells.clone()))
        .chain([(
            "class".to_string(),
            vec!["negative".to_string(), "positive".to_string()],
        )])
        .collect();
    Dataset {
        feature_names: positions.iter().map(|s| s.to_string()).collect(),
        feature_kinds: vec![ColumnKind::Categorical; 9],
        x,
        target_name: Some("class".into()),
        y: Some(y),
        encodings,
    }
}

/// Resolves `glass`, `tictactoe`, `synthetic-regression` or
/// `synthetic-classification` (the last two with 1024 rows, 8 features,
/// seed 0).
pub fn by_name(name: &str) -> Option<Result<Dataset>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    match name {
        "glass" => Some(glass()),
        "tictactoe" => Some(Ok(tictactoe())),
        "synthetic-regression" => Some(Ok(super::synthetic::piecewise_regression(1024, 8, &mut rng))),
        "synthetic-classification" => Some(Ok(super::synthetic::threshold_classification(1024, 8, &mut rng))),
        _ => None,
    }
}
