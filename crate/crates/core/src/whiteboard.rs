//! Shared whiteboards. Stroke operations carry a server-assigned total
//! order; folding the same prefix of that order always yields the same
//! boards, which is how every client converges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoardError {
    #[error("out of order: expected seq {expected}, got {got:?}")]
    OutOfOrder { expected: u64, got: Option<u64> },
    #[error("orphan point: stroke {stroke_id} by {author} is not open")]
    OrphanPoint { author: String, stroke_id: String },
    #[error("stroke {stroke_id} by {author} already exists")]
    DuplicateStroke { author: String, stroke_id: String },
    #[error("unknown board {0}")]
    UnknownBoard(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
}

impl BoardError {
    pub fn code(&self) -> &'static str {
        match self {
            BoardError::OutOfOrder { .. } => "out-of-order",
            BoardError::OrphanPoint { .. } => "orphan-point",
            BoardError::DuplicateStroke { .. } => "duplicate-stroke",
            BoardError::UnknownBoard(_) => "unknown-board",
            BoardError::InvalidPoint(_) => "invalid-point",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoardOpKind {
    StrokeBegin,
    StrokePoint,
    StrokeEnd,
    Clear,
}

/// Normalized board coordinates, serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point(pub f64, pub f64);

impl Point {
    pub fn in_unit_square(self) -> bool {
        (0.0..=1.0).contains(&self.0) && (0.0..=1.0).contains(&self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardOp {
    pub kind: BoardOpKind,
    pub board_id: String,
    #[serde(default)]
    pub stroke_id: String,
    #[serde(default)]
    pub author: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    #[serde(default)]
    pub t_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

impl BoardOp {
    /// Shape checks that do not depend on board state.
    pub fn validate(&self) -> Result<(), BoardError> {
        match self.kind {
            BoardOpKind::StrokeBegin | BoardOpKind::StrokePoint => match self.point {
                Some(p) if p.in_unit_square() => Ok(()),
                Some(p) => Err(BoardError::InvalidPoint(format!("({}, {}) outside the unit square", p.0, p.1))),
                None => Err(BoardError::InvalidPoint("missing point".into())),
            },
            BoardOpKind::StrokeEnd | BoardOpKind::Clear => match self.point {
                Some(p) if !p.in_unit_square() => {
                    Err(BoardError::InvalidPoint(format!("({}, {}) outside the unit square", p.0, p.1)))
                }
                _ => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub author: String,
    pub stroke_id: String,
    /// Position in drawing order on this board since the last clear.
    pub order: usize,
    pub points: Vec<Point>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardState {
    pub board_id: String,
    pub strokes: Vec<Stroke>,
}

impl BoardState {
    pub fn new(board_id: impl Into<String>) -> Self {
        BoardState { board_id: board_id.into(), strokes: Vec::new() }
    }

    /// Strokes begun since the last clear, finished or not.
    pub fn stroke_count(&self) -> usize {
        self.strokes.len()
    }

    fn find(&self, author: &str, stroke_id: &str) -> Option<usize> {
        self.strokes.iter().position(|s| s.author == author && s.stroke_id == stroke_id)
    }

    /// Would `op` apply cleanly? Leaves the board untouched.
    pub fn check(&self, op: &BoardOp) -> Result<(), BoardError> {
        op.validate()?;
        match op.kind {
            BoardOpKind::StrokeBegin => match self.find(&op.author, &op.stroke_id) {
                Some(_) => Err(BoardError::DuplicateStroke { author: op.author.clone(), stroke_id: op.stroke_id.clone() }),
                None => Ok(()),
            },
            BoardOpKind::StrokePoint | BoardOpKind::StrokeEnd => match self.find(&op.author, &op.stroke_id) {
                Some(i) if !self.strokes[i].complete => Ok(()),
                _ => Err(BoardError::OrphanPoint { author: op.author.clone(), stroke_id: op.stroke_id.clone() }),
            },
            BoardOpKind::Clear => Ok(()),
        }
    }

    /// Apply one op. A rejected op leaves the board unchanged.
    pub fn apply(&mut self, op: &BoardOp) -> Result<(), BoardError> {
        self.check(op)?;
        match op.kind {
            BoardOpKind::StrokeBegin => {
                let order = self.strokes.len();
                self.strokes.push(Stroke {
                    author: op.author.clone(),
                    stroke_id: op.stroke_id.clone(),
                    order,
                    points: op.point.into_iter().collect(),
                    complete: false,
                });
            }
            BoardOpKind::StrokePoint | BoardOpKind::StrokeEnd => {
                let i = self.find(&op.author, &op.stroke_id).expect("checked");
                let stroke = &mut self.strokes[i];
                stroke.points.extend(op.point);
                stroke.complete = op.kind == BoardOpKind::StrokeEnd;
            }
            BoardOpKind::Clear => self.strokes.clear(),
        }
        Ok(())
    }
}

/// All boards of a session plus the cursor into the session's total order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSet {
    pub boards: Vec<BoardState>,
    pub last_seq: u64,
}

impl BoardSet {
    pub fn new<I, S>(board_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BoardSet { boards: board_ids.into_iter().map(BoardState::new).collect(), last_seq: 0 }
    }

    pub fn board(&self, board_id: &str) -> Option<&BoardState> {
        self.boards.iter().find(|b| b.board_id == board_id)
    }

    pub fn stroke_count(&self, board_id: &str) -> Option<usize> {
        self.board(board_id).map(BoardState::stroke_count)
    }

    fn expect_next(&self, seq: Option<u64>) -> Result<u64, BoardError> {
        let expected = self.last_seq + 1;
        match seq {
            Some(s) if s == expected => Ok(s),
            got => Err(BoardError::OutOfOrder { expected, got }),
        }
    }

    /// Dry run of [`BoardSet::apply_op`] ignoring sequencing.
    pub fn check(&self, op: &BoardOp) -> Result<(), BoardError> {
        self.board(&op.board_id).ok_or_else(|| BoardError::UnknownBoard(op.board_id.clone()))?.check(op)
    }

    /// Apply a sequenced op. The seq must be the next one in the session
    /// order. An op that fails on the board still consumes its seq.
    pub fn apply_op(&mut self, op: &BoardOp) -> Result<(), BoardError> {
        let seq = self.expect_next(op.seq)?;
        self.last_seq = seq;
        let board = self
            .boards
            .iter_mut()
            .find(|b| b.board_id == op.board_id)
            .ok_or_else(|| BoardError::UnknownBoard(op.board_id.clone()))?;
        board.apply(op)
    }

    /// Consume a seq taken by a non-board message.
    pub fn advance(&mut self, seq: u64) -> Result<(), BoardError> {
        self.last_seq = self.expect_next(Some(seq))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn op(kind: BoardOpKind, author: &str, stroke: &str, point: Option<(f64, f64)>, seq: u64) -> BoardOp {
        BoardOp {
            kind,
            board_id: "teacher".into(),
            stroke_id: stroke.into(),
            author: author.into(),
            point: point.map(|(x, y)| Point(x, y)),
            t_ms: seq as i64 * 10,
            seq: Some(seq),
        }
    }

    fn set() -> BoardSet {
        BoardSet::new(["teacher", "student"])
    }

    #[test]
    fn begin_points_end_builds_one_stroke() {
        let mut b = set();
        b.apply_op(&op(BoardOpKind::StrokeBegin, "p1", "s1", Some((0.1, 0.1)), 1)).unwrap();
        b.apply_op(&op(BoardOpKind::StrokePoint, "p1", "s1", Some((0.2, 0.2)), 2)).unwrap();
        b.apply_op(&op(BoardOpKind::StrokePoint, "p1", "s1", Some((0.3, 0.3)), 3)).unwrap();
        b.apply_op(&op(BoardOpKind::StrokeEnd, "p1", "s1", None, 4)).unwrap();
        let board = b.board("teacher").unwrap();
        assert_eq!(board.stroke_count(), 1);
        assert_eq!(board.strokes[0].points.len(), 3);
        assert!(board.strokes[0].complete);
    }

    #[test]
    fn orphan_point_leaves_board_unchanged() {
        let mut b = set();
        let before = b.boards.clone();
        let err = b.apply_op(&op(BoardOpKind::StrokePoint, "p1", "s9", Some((0.5, 0.5)), 1)).unwrap_err();
        assert_eq!(err.code(), "orphan-point");
        assert_eq!(b.boards, before);
        assert_eq!(b.last_seq, 1);
    }

    #[test]
    fn point_after_end_is_orphan() {
        let mut b = set();
        b.apply_op(&op(BoardOpKind::StrokeBegin, "p1", "s1", Some((0.1, 0.1)), 1)).unwrap();
        b.apply_op(&op(BoardOpKind::StrokeEnd, "p1", "s1", None, 2)).unwrap();
        assert!(b.apply_op(&op(BoardOpKind::StrokePoint, "p1", "s1", Some((0.1, 0.2)), 3)).is_err());
    }

    #[test]
    fn stroke_ids_are_author_scoped() {
        let mut b = set();
        b.apply_op(&op(BoardOpKind::StrokeBegin, "p1", "s1", Some((0.1, 0.1)), 1)).unwrap();
        b.apply_op(&op(BoardOpKind::StrokeBegin, "p2", "s1", Some((0.9, 0.9)), 2)).unwrap();
        assert_eq!(b.stroke_count("teacher"), Some(2));
        let dup = b.apply_op(&op(BoardOpKind::StrokeBegin, "p1", "s1", Some((0.1, 0.1)), 3));
        assert_eq!(dup.unwrap_err().code(), "duplicate-stroke");
    }

    #[test]
    fn gaps_and_replays_rejected() {
        let mut b = set();
        assert!(matches!(
            b.apply_op(&op(BoardOpKind::Clear, "p1", "", None, 2)),
            Err(BoardError::OutOfOrder { expected: 1, got: Some(2) })
        ));
        b.apply_op(&op(BoardOpKind::Clear, "p1", "", None, 1)).unwrap();
        assert!(b.apply_op(&op(BoardOpKind::Clear, "p1", "", None, 1)).is_err());
        let mut unsequenced = op(BoardOpKind::Clear, "p1", "", None, 2);
        unsequenced.seq = None;
        assert!(b.apply_op(&unsequenced).is_err());
        b.advance(2).unwrap();
        assert!(b.advance(4).is_err());
    }

    #[test]
    fn stroke_count_cases() {
        let mut b = set();
        assert_eq!(b.stroke_count("teacher"), Some(0));
        let mut seq = 0;
        for s in ["a", "b", "c"] {
            seq += 1;
            b.apply_op(&op(BoardOpKind::StrokeBegin, "p1", s, Some((0.5, 0.5)), seq)).unwrap();
            seq += 1;
            b.apply_op(&op(BoardOpKind::StrokeEnd, "p1", s, None, seq)).unwrap();
        }
        assert_eq!(b.stroke_count("teacher"), Some(3));
        seq += 1;
        b.apply_op(&op(BoardOpKind::Clear, "p1", "", None, seq)).unwrap();
        assert_eq!(b.stroke_count("teacher"), Some(0));
        assert_eq!(b.stroke_count("nope"), None);
    }

    #[test]
    fn coordinates_validated() {
        let bad = op(BoardOpKind::StrokeBegin, "p1", "s1", Some((1.5, 0.0)), 1);
        assert_eq!(bad.validate().unwrap_err().code(), "invalid-point");
        let missing = op(BoardOpKind::StrokePoint, "p1", "s1", None, 1);
        assert!(missing.validate().is_err());
    }

    #[test]
    fn unknown_board() {
        let mut b = set();
        let mut o = op(BoardOpKind::Clear, "p1", "", None, 1);
        o.board_id = "wall".into();
        assert_eq!(b.apply_op(&o).unwrap_err().code(), "unknown-board");
    }

    #[test]
    fn wire_shape() {
        let o = op(BoardOpKind::StrokeBegin, "p1", "s1", Some((0.25, 0.5)), 7);
        assert_eq!(
            crate::canonical::to_string(&o).unwrap(),
            r#"{"author":"p1","board_id":"teacher","kind":"STROKE_BEGIN","point":[0.25,0.5],"seq":7,"stroke_id":"s1","t_ms":70}"#
        );
    }

    /// Random op sequences over two authors and two boards, orphans and
    /// duplicates included.
    fn arb_ops() -> impl Strategy<Value = Vec<BoardOp>> {
        let one = (0u8..4, 0usize..2, 0usize..2, 0usize..3, 0.0f64..=1.0, 0.0f64..=1.0);
        prop::collection::vec(one, 0..120).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, (k, author, board, stroke, x, y))| {
                    let kind = [BoardOpKind::StrokeBegin, BoardOpKind::StrokePoint, BoardOpKind::StrokeEnd, BoardOpKind::Clear]
                        [k as usize];
                    BoardOp {
                        kind,
                        board_id: ["teacher", "student"][board].into(),
                        stroke_id: format!("s{stroke}"),
                        author: ["p1", "p2"][author].into(),
                        point: Some(Point(x, y)),
                        t_ms: i as i64,
                        seq: Some(i as u64 + 1),
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn persisted_log_replays_to_live_state(ops in arb_ops(), cut in 0usize..120) {
            let mut live = set();
            let mut log = String::new();
            let cut = cut.min(ops.len());
            let mut at_cut = None;
            for (i, o) in ops.iter().enumerate() {
                if i == cut {
                    at_cut = Some(live.clone());
                }
                let _ = live.apply_op(o);
                log.push_str(&crate::canonical::to_line(o).unwrap());
            }
            let at_cut = at_cut.unwrap_or_else(|| live.clone());

            let persisted: Vec<BoardOp> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
            let mut replica = set();
            for (i, o) in persisted.iter().enumerate() {
                if i == cut {
                    prop_assert_eq!(
                        crate::canonical::to_string(&replica).unwrap(),
                        crate::canonical::to_string(&at_cut).unwrap()
                    );
                }
                let _ = replica.apply_op(o);
            }
            prop_assert_eq!(
                crate::canonical::to_string(&live).unwrap(),
                crate::canonical::to_string(&replica).unwrap()
            );
        }

        #[test]
        fn stroke_order_follows_begin_order(ops in arb_ops()) {
            let mut live = set();
            let mut begins: Vec<Vec<(String, String)>> = vec![Vec::new(), Vec::new()];
            for o in &ops {
                let idx = if o.board_id == "teacher" { 0 } else { 1 };
                let ok = live.apply_op(o).is_ok();
                match o.kind {
                    BoardOpKind::StrokeBegin if ok => begins[idx].push((o.author.clone(), o.stroke_id.clone())),
                    BoardOpKind::Clear => begins[idx].clear(),
                    _ => {}
                }
            }
            for (board, expected) in live.boards.iter().zip(&begins) {
                let got: Vec<_> = board.strokes.iter().map(|s| (s.author.clone(), s.stroke_id.clone())).collect();
                prop_assert_eq!(&got, expected);
                prop_assert!(board.strokes.iter().enumerate().all(|(i, s)| s.order == i));
            }
        }
    }
}
