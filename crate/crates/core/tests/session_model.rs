//! Exhaustive check of the session transition table.

mod common;

use std::collections::BTreeSet;

use common::{explore, fixture_engine};
use ivirs_core::session::{transition_targets, ActionKind, StateKind, TRANSITIONS};

#[test]
fn every_transition_is_in_the_table_and_every_table_entry_is_reachable() {
    let dir = tempfile::tempdir().unwrap();
    let engine = fixture_engine(dir.path());
    let (observed, visited) = explore(&engine, 6);
    assert!(visited > 100, "explored only {visited} sessions");
    let table: BTreeSet<_> = TRANSITIONS
        .iter()
        .flat_map(|(s, a, ts)| ts.iter().map(move |t| (*s, *a, *t)))
        .collect();
    let missing: Vec<_> = table.difference(&observed).collect();
    assert!(missing.is_empty(), "never exercised: {missing:?}");
}

#[test]
fn nothing_but_login_while_awaiting_login() {
    for kind in ActionKind::ALL {
        let allowed = transition_targets(StateKind::AwaitingLogin, kind).is_some();
        assert_eq!(allowed, kind == ActionKind::Login, "{kind:?}");
        assert!(transition_targets(StateKind::Closed, kind).is_none());
    }
}
