//! Generated samples checked by evaluators written independently of the
//! generators.

use std::collections::HashMap;

use ldarm::data::{generate_splits, SyntheticOptions, TaskFamily, TaskSample};

fn samples(family: TaskFamily, opts: &SyntheticOptions) -> Vec<TaskSample> {
    let [train, _, test] = generate_splits(family, [300, 0, 100], 7, opts).unwrap();
    train.samples.into_iter().chain(test.samples).collect()
}

/// Recursive-descent evaluation of `digits`, `+`, `*` and parentheses.
fn eval_expr(s: &[u8], pos: &mut usize) -> i64 {
    let mut value = eval_term(s, pos);
    while *pos < s.len() && s[*pos] == b'+' {
        *pos += 1;
        value += eval_term(s, pos);
    }
    value
}

fn eval_term(s: &[u8], pos: &mut usize) -> i64 {
    let mut value = eval_atom(s, pos);
    while *pos < s.len() && s[*pos] == b'*' {
        *pos += 1;
        value *= eval_atom(s, pos);
    }
    value
}

fn eval_atom(s: &[u8], pos: &mut usize) -> i64 {
    if s[*pos] == b'(' {
        *pos += 1;
        let v = eval_expr(s, pos);
        assert_eq!(s[*pos], b')');
        *pos += 1;
        return v;
    }
    let start = *pos;
    while *pos < s.len() && s[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&s[start..*pos]).unwrap().parse().unwrap()
}

#[test]
fn arith_answers_match_direct_evaluation() {
    for s in samples(TaskFamily::ArithChain, &SyntheticOptions::default()) {
        let (expr, rest) = s.question.split_once(" mod ").unwrap();
        let modulus: i64 = rest.trim_end_matches(" = ?").parse().unwrap();
        let value = eval_expr(expr.as_bytes(), &mut 0);
        assert_eq!(s.answer, (value % modulus).to_string(), "{}", s.question);
        assert_eq!(s.plan.split(',').next_back().unwrap(), value.to_string());
    }
}

/// Follows assignments from the queried variable to a digit.
fn resolve(question: &str) -> (String, Vec<String>) {
    let (body, query) = question.split_once("; ").unwrap();
    let table: HashMap<&str, &str> = body.split(';').map(|a| a.split_once('=').unwrap()).collect();
    let mut at = query.trim_end_matches('?');
    let mut visited = Vec::new();
    loop {
        let next = table[at];
        if next.parse::<u8>().is_ok() {
            return (next.to_string(), visited);
        }
        visited.push(next.to_string());
        at = next;
    }
}

#[test]
fn kv_answers_and_plans_follow_the_reference_chain() {
    let shuffled = SyntheticOptions::default();
    let table = SyntheticOptions {
        kv_table: true,
        kv_letters: 6,
        kv_depth: (2, 3),
        ..Default::default()
    };
    for opts in [shuffled, table] {
        for s in samples(TaskFamily::KvLookup, &opts) {
            let (answer, visited) = resolve(&s.question);
            assert_eq!(s.answer, answer, "{}", s.question);
            assert_eq!(s.plan, visited.join(">"), "{}", s.question);
        }
    }
}

#[test]
fn spelled_out_kv_example_resolves() {
    assert_eq!(resolve("A=9;B=A;C=B; C?"), ("9".to_string(), vec!["B".to_string(), "A".to_string()]));
}

#[test]
fn sorted_rank_answers_index_the_sorted_list() {
    for s in samples(TaskFamily::SortedRank, &SyntheticOptions::default()) {
        let inner = s.question.trim_start_matches("sorted(");
        let (list, rest) = inner.split_once(")[").unwrap();
        let k: usize = rest.split_once(']').unwrap().0.parse().unwrap();
        let mut xs: Vec<u8> = list.split(' ').map(|x| x.parse().unwrap()).collect();
        xs.sort();
        assert_eq!(s.answer, xs[k].to_string());
        let shown: Vec<String> = xs.iter().map(u8::to_string).collect();
        assert_eq!(s.plan, shown.join(" "));
    }
}

#[test]
fn copy_answers_repeat_the_question() {
    for s in samples(TaskFamily::Copy, &SyntheticOptions::default()) {
        assert!(s.question.contains(&s.answer), "{} / {}", s.question, s.answer);
    }
}
