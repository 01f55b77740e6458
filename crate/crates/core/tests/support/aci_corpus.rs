//! Generated buyer messages mixing prose with image, order, product, video
//! and plain links, including repeats and links below the length threshold,
//! plus the checker for every placeholder invariant.

#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use shopdesk::action::aci::{AciConfig, PlaceholderTable};

const WORDS: &[&str] = &[
    "hello", "my", "order", "arrived", "broken", "see", "photo", "please", "refund", "thanks",
    "is", "this", "in", "stock", "(", ")", "?", "!", "color", "wrong", "kettle", "towel", "-",
    "here:", "and", "also",
];

fn long_url() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u32..6).prop_map(|i| format!("https://img.shop-cdn.example/u/{i}/photos/item-{i}.jpg")),
        (0u32..6).prop_map(|i| format!("https://img.shop-cdn.example/u/{i}/shots/detail-{i}.png")),
        (0u32..5).prop_map(|i| format!("https://shop.example.com/order/O{i:04}/detail?src=app")),
        (0u32..5).prop_map(|i| format!("https://shop.example.com/item/P{i:03}?spm=a1z10.3-c")),
        (0u32..3).prop_map(|i| format!("https://cdn.shop.example/clips/unboxing-{i}.mp4")),
        (0u32..3).prop_map(|i| format!("https://video.shop.example/watch/v{i}x9k2z")),
        (0u32..3).prop_map(|i| format!("https://help.shop.example/articles/returns-{i}")),
    ]
}

fn short_url() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u32..9).prop_map(|i| format!("http://a.io/{i}.jpg")),
        (0u32..9).prop_map(|i| format!("https://s.ex/o/{i}")),
    ]
}

fn segment() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => proptest::sample::select(WORDS).prop_map(str::to_string),
        2 => long_url(),
        1 => short_url(),
        1 => long_url().prop_map(|u| format!("({u})")),
        1 => long_url().prop_map(|u| format!("{u}.")),
    ]
}

pub fn message() -> impl Strategy<Value = String> {
    proptest::collection::vec(segment(), 1..14).prop_map(|parts| parts.join(" "))
}

/// A fixed, reproducible corpus of `n` messages.
pub fn corpus(n: usize) -> Vec<String> {
    let mut runner = TestRunner::deterministic();
    let strategy = message();
    (0..n)
        .map(|_| {
            strategy
                .new_tree(&mut runner)
                .expect("strategy builds")
                .current()
        })
        .collect()
}

/// Checks every placeholder invariant over one session's messages.
pub fn check_session(messages: &[String]) -> Result<(), String> {
    let config = AciConfig::default();
    let mut table = PlaceholderTable::new();
    let mut first_seen: Vec<String> = Vec::new();
    for text in messages {
        for (_, url, _) in config.qualifying_urls(text) {
            if !first_seen.iter().any(|u| u == url) {
                first_seen.push(url.to_string());
            }
        }
        let once = table.abstract_text(text, &config);
        let size = table.len();
        let twice = table.abstract_text(&once, &config);
        if twice != once || table.len() != size {
            return Err(format!("not idempotent: {text:?}"));
        }
        let (back, warnings) = table.deabstract(&once);
        if back != *text || !warnings.is_empty() {
            return Err(format!("round trip changed {text:?} into {back:?}"));
        }
        let (a, b) = (once.chars().count(), text.chars().count());
        if a > b || (once != *text && a >= b) {
            return Err(format!("not compacted: {text:?} -> {once:?}"));
        }
    }
    let originals: Vec<&str> = table
        .entries()
        .iter()
        .map(|e| e.original.as_str())
        .collect();
    if originals != first_seen {
        return Err("entries are not in order of first appearance".into());
    }
    let mut per_kind: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for e in table.entries() {
        let index: usize = e
            .placeholder
            .trim_matches(|c| c == '[' || c == ']')
            .rsplit(' ')
            .next()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| format!("bad placeholder {}", e.placeholder))?;
        if e.placeholder.chars().count() > 12 {
            return Err(format!("placeholder too long: {}", e.placeholder));
        }
        per_kind
            .entry(format!("{:?}", e.kind))
            .or_default()
            .push(index);
    }
    for (kind, indices) in per_kind {
        if indices != (1..=indices.len()).collect::<Vec<_>>() {
            return Err(format!("{kind} numbering not dense: {indices:?}"));
        }
    }
    Ok(())
}
