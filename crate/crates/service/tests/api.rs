mod common;

use std::collections::HashSet;
use std::sync::{Arc, Barrier};

use common::{fixture, fixture_with, profile};
use tastebud::catalog::DietType;
use tastebud::elicitation::{Phase, UserState};
use tastebud_service::{
    ServiceError, SessionEvent, SessionRecord, SessionStatus, StepView, SubmitResponse, Verdict,
};

fn first_of(step: &StepView) -> Vec<String> {
    vec![step.items[0].id.clone()]
}

/// Answers every step by picking the first item until the session ends.
fn run_to_end(service: &tastebud_service::Service, id: &str, mut step: StepView) -> SubmitResponse {
    loop {
        let out = service.submit(id, &first_of(&step), None).unwrap();
        match out.step.clone() {
            Some(next) => step = next,
            None => return out,
        }
    }
}

#[test]
fn vegetarian_session_opens_with_a_grid_of_vegetarian_items() {
    let f = fixture();
    let service = f.service();
    let created = service.create_session(&profile("vegetarian")).unwrap();
    let step = &created.step;
    assert_eq!(step.iteration, 1);
    assert_eq!(step.iterations, 15);
    assert_eq!(step.phase, Phase::Grid10);
    assert_eq!(step.items.len(), 10);
    let catalog = f.engines.get(DietType::Vegetarian).unwrap().catalog();
    for item in &step.items {
        let index = catalog.index_of(&item.id).expect("item from the vegetarian catalog");
        assert!(catalog.item(index).diet_tags.contains(&DietType::Vegetarian));
    }
    let json = serde_json::to_value(&created).unwrap();
    let keys: Vec<&String> = json["step"]["items"][0].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["id", "image_url", "name"]);
}

#[test]
fn malformed_profiles_are_rejected() {
    let f = fixture();
    let service = f.service();
    let mut bad = profile("vegan");
    bad["fat"] = "lots".into();
    let err = service.create_session(&bad).unwrap_err();
    assert!(matches!(err, ServiceError::InvalidProfile(_)), "{err}");
    assert_eq!(err.status(), 400);

    let err = service.create_session(&profile("paleo")).unwrap_err();
    assert!(matches!(err, ServiceError::UnknownDiet(_)));
    assert_eq!(err.code(), "UnknownDiet");

    let mut missing = profile("vegan");
    missing.as_object_mut().unwrap().remove("protein");
    assert!(matches!(service.create_session(&missing), Err(ServiceError::InvalidProfile(_))));

    // CLI spellings are accepted
    assert!(service.create_session(&profile("none")).is_ok());
}

#[test]
fn sessions_with_the_same_profile_get_different_grids() {
    let f = fixture();
    let service = f.service();
    let a = service.create_session(&profile("no_restrictions")).unwrap();
    let b = service.create_session(&profile("no_restrictions")).unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert_ne!(a.step.items, b.step.items);
}

#[test]
fn selection_outside_the_presentation_changes_nothing() {
    let f = fixture();
    let service = f.service();
    let created = service.create_session(&profile("vegan")).unwrap();
    let shown: HashSet<&str> = created.step.items.iter().map(|i| i.id.as_str()).collect();
    let catalog = f.engines.get(DietType::Vegan).unwrap().catalog();
    let outsider = catalog
        .items()
        .iter()
        .find(|i| !shown.contains(i.id.as_str()))
        .unwrap()
        .id
        .clone();
    let before = service.get(&created.session_id).unwrap();
    for bad in [vec![outsider], vec!["no-such-item".to_string()]] {
        let err = service.submit(&created.session_id, &bad, None).unwrap_err();
        assert!(matches!(err, ServiceError::SelectionNotSubset(_)));
        assert_eq!(err.status(), 422);
    }
    assert_eq!(service.get(&created.session_id).unwrap(), before);
    let next = service.submit(&created.session_id, &first_of(&created.step), None).unwrap();
    assert_eq!(next.step.unwrap().iteration, 2);
}

#[test]
fn full_session_ends_with_ranked_recommendations() {
    let f = fixture();
    let service = f.service();
    let created = service.create_session(&profile("no_restrictions")).unwrap();
    let id = created.session_id.clone();

    // duplicates count once, an empty answer is allowed
    let dup = vec![created.step.items[0].id.clone(), created.step.items[0].id.clone()];
    let second = service.submit(&id, &dup, None).unwrap().step.unwrap();
    assert_eq!(second.phase, Phase::Grid10);
    let third = service.submit(&id, &[], None).unwrap().step.unwrap();
    assert_eq!(third.phase, Phase::Pair);
    assert_eq!(third.items.len(), 2);

    let done = run_to_end(&service, &id, third);
    assert_eq!(done.status, SessionStatus::Completed);
    let recs = done.recommendations.unwrap();
    assert_eq!(recs.len(), 10);
    let prefs: Vec<f64> = recs.items.iter().map(|r| r.preference).collect();
    assert!(prefs.windows(2).all(|w| w[0] >= w[1]), "{prefs:?}");

    let record = service.get(&id).unwrap();
    assert_eq!(record.status, SessionStatus::Completed);
    assert_eq!(record.entries.len(), 15);
    assert_eq!(record.entries[0].selected.as_ref().unwrap().len(), 1);
    assert_eq!(record.entropy.len(), 16);
    assert!(record.final_state.is_some());

    let engine = f.engines.get(DietType::NoRestrictions).unwrap();
    let pool = engine.pool(&record.profile, record.pool_size, tastebud::rng::derive_seed(record.seed, &[b"pool"]));
    for r in &recs.items {
        assert!(pool.contains(engine.catalog().index_of(&r.id).unwrap()));
    }

    let err = service.submit(&id, &[], None).unwrap_err();
    assert!(matches!(err, ServiceError::SessionCompleted));
    assert_eq!(err.status(), 409);
}

#[test]
fn retried_nonce_is_applied_once() {
    let f = fixture();
    let service = f.service();
    let created = service.create_session(&profile("vegan")).unwrap();
    let id = &created.session_id;
    let a = service.submit(id, &first_of(&created.step), Some("n1")).unwrap();
    let b = service.submit(id, &first_of(&created.step), Some("n1")).unwrap();
    assert_eq!(a, b);
    assert_eq!(service.get(id).unwrap().answered().count(), 1);
    let c = service.submit(id, &[], Some("n2")).unwrap();
    assert_eq!(c.step.unwrap().iteration, 3);
}

#[test]
fn concurrent_submits_never_double_apply() {
    let f = fixture();
    let service = Arc::new(f.service());
    let created = service.create_session(&profile("no_restrictions")).unwrap();
    let threads = 8;
    let barrier = Arc::new(Barrier::new(threads));
    let handles: Vec<_> = (0..threads)
        .map(|k| {
            let service = service.clone();
            let barrier = barrier.clone();
            let id = created.session_id.clone();
            std::thread::spawn(move || {
                barrier.wait();
                service.submit(&id, &[], Some(&format!("n{k}")))
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let ok = results.iter().filter(|r| r.is_ok()).count();
    for r in &results {
        if let Err(e) = r {
            assert!(matches!(e, ServiceError::ConcurrentStep), "{e}");
            assert_eq!(e.status(), 409);
        }
    }
    assert!(ok >= 1);
    let record = service.get(&created.session_id).unwrap();
    assert_eq!(record.answered().count(), ok);
    // the stored log agrees with memory
    let events = service.store().read(&created.session_id).unwrap();
    let initial = record.entropy[0];
    assert_eq!(SessionRecord::from_events(&events, initial).unwrap(), record);
}

#[test]
fn get_reports_fresh_completed_and_unknown_sessions() {
    let f = fixture();
    let service = f.service();
    let created = service.create_session(&profile("halal")).unwrap();
    let fresh = service.get(&created.session_id).unwrap();
    assert_eq!(fresh.status, SessionStatus::AwaitingChoices);
    assert_eq!(fresh.entries.len(), 1);
    assert!(fresh.pending().is_some());
    let n = f.engines.get(DietType::Halal).unwrap().catalog().len() as f64;
    assert_eq!(fresh.entropy.len(), 1);
    assert!((fresh.entropy[0] - n.ln()).abs() < 1e-9);
    assert!(fresh.recommendations.is_none());

    run_to_end(&service, &created.session_id, created.step.clone());
    let done = service.get(&created.session_id).unwrap();
    assert_eq!(done.recommendations.as_ref().unwrap().len(), 10);

    let err = service.get("missing").unwrap_err();
    assert!(matches!(err, ServiceError::UnknownSession(_)));
    assert_eq!(err.status(), 404);
    assert!(matches!(service.submit("missing", &[], None), Err(ServiceError::UnknownSession(_))));
}

#[test]
fn replay_reproduces_the_final_state_exactly() {
    let f = fixture();
    let service = f.service();
    for diet in ["vegan", "kosher", "no_restrictions"] {
        let created = service.create_session(&profile(diet)).unwrap();
        run_to_end(&service, &created.session_id, created.step.clone());
        let record = service.get(&created.session_id).unwrap();
        let replayed = service.replay(&record).unwrap();
        assert_eq!(&replayed.to_json(), record.final_state.as_ref().unwrap());
    }
}

#[test]
fn replay_of_an_empty_record_is_the_uniform_state() {
    let f = fixture();
    let service = f.service();
    let created = service.create_session(&profile("vegan")).unwrap();
    let mut record = service.get(&created.session_id).unwrap();
    record.entries.clear();
    let state = service.replay(&record).unwrap();
    let n = f.engines.get(DietType::Vegan).unwrap().catalog().len();
    assert_eq!(state.t(), 0);
    assert_eq!(state.to_json(), UserState::new(n).unwrap().to_json());
    assert!((state.entropy() - (n as f64).ln()).abs() < 1e-12);
}

#[test]
fn changed_beta_makes_old_sessions_read_only() {
    let f = fixture();
    let created = {
        let service = f.service();
        let c = service.create_session(&profile("vegan")).unwrap();
        service.submit(&c.session_id, &first_of(&c.step), None).unwrap();
        c
    };
    let changed = f.service_with(|c| c.beta = Some(0.0001));
    let record = changed.get(&created.session_id).unwrap();
    assert_eq!(record.answered().count(), 1);
    assert!(matches!(changed.replay(&record), Err(ServiceError::ConfigHashMismatch { .. })));
    let err = changed.submit(&created.session_id, &[], None).unwrap_err();
    assert!(matches!(err, ServiceError::ConfigHashMismatch { .. }));
    assert_eq!(err.status(), 409);

    // the original config still resumes it
    let original = f.service();
    let resumed = original.submit(&created.session_id, &[], None).unwrap();
    assert_eq!(resumed.step.unwrap().iteration, 3);
}

fn drop_last_line(path: &std::path::Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn restart_resumes_sessions_and_restores_a_lost_presentation() {
    let f = fixture();
    let (id, step3) = {
        let service = f.service();
        let c = service.create_session(&profile("no_restrictions")).unwrap();
        let s2 = service.submit(&c.session_id, &first_of(&c.step), None).unwrap().step.unwrap();
        let s3 = service.submit(&c.session_id, &first_of(&s2), None).unwrap().step.unwrap();
        (c.session_id, s3)
    };
    // crash after the answer was written but before the next presentation
    let path = f.config.data_dir.join(format!("{id}.jsonl"));
    drop_last_line(&path);
    // plus a torn partial line
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str(r#"{"event":"presen"#);
    std::fs::write(&path, text).unwrap();

    let service = f.service();
    let record = service.get(&id).unwrap();
    assert_eq!(record.pending().unwrap().t, 3);
    let ids: Vec<String> = step3.items.iter().map(|i| i.id.clone()).collect();
    assert_eq!(record.pending().unwrap().presented, ids);
    let done = run_to_end(&service, &id, step3);
    assert_eq!(done.status, SessionStatus::Completed);
    let record = service.get(&id).unwrap();
    assert_eq!(&service.replay(&record).unwrap().to_json(), record.final_state.as_ref().unwrap());
}

#[test]
fn restart_completes_a_session_whose_completion_was_lost() {
    let f = fixture();
    let (id, recs) = {
        let service = f.service();
        let c = service.create_session(&profile("vegan")).unwrap();
        let done = run_to_end(&service, &c.session_id, c.step.clone());
        (c.session_id, done.recommendations.unwrap())
    };
    drop_last_line(&f.config.data_dir.join(format!("{id}.jsonl")));
    let service = f.service();
    let record = service.get(&id).unwrap();
    assert_eq!(record.status, SessionStatus::Completed);
    assert_eq!(record.recommendations.unwrap(), recs);
}

#[test]
fn idle_sessions_are_abandoned() {
    let f = fixture_with(400, |c| c.session_ttl_secs = 60);
    let service = f.service();
    let a = service.create_session(&profile("vegan")).unwrap();
    let b = service.create_session(&profile("vegan")).unwrap();
    f.advance_ms(30_000);
    service.submit(&b.session_id, &first_of(&b.step), None).unwrap();
    f.advance_ms(40_000);
    let err = service.submit(&a.session_id, &[], None).unwrap_err();
    assert!(matches!(err, ServiceError::SessionAbandoned));
    assert_eq!(err.status(), 410);
    assert_eq!(service.get(&a.session_id).unwrap().status, SessionStatus::Abandoned);
    assert_eq!(service.sweep_idle(), 0);
    f.advance_ms(40_000);
    assert_eq!(service.sweep_idle(), 1);
    assert_eq!(service.get(&b.session_id).unwrap().status, SessionStatus::Abandoned);
    let events = service.store().read(&b.session_id).unwrap();
    assert!(matches!(events.last(), Some(SessionEvent::Abandoned { .. })));
}

#[test]
fn blinded_evaluation_mixes_both_lists() {
    let f = fixture();
    let service = f.service();
    let c = service.create_session(&profile("no_restrictions")).unwrap();
    assert!(matches!(service.evaluation(&c.session_id), Err(ServiceError::NotCompleted)));
    let done = run_to_end(&service, &c.session_id, c.step.clone());
    let elicited: HashSet<String> = done.recommendations.unwrap().items.into_iter().map(|r| r.id).collect();

    let view = service.evaluation(&c.session_id).unwrap();
    assert_eq!(view.items.len(), 20);
    assert_eq!(view.remaining, 20);
    let ids: HashSet<&str> = view.items.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids.len(), 20);
    assert_eq!(ids.iter().filter(|id| elicited.contains(**id)).count(), 10);
    let json = serde_json::to_string(&view).unwrap();
    assert!(!json.contains("baseline") && !json.contains("elicited") && !json.contains("source"));
    assert!(!serde_json::to_string(&service.get(&c.session_id).unwrap()).unwrap().contains("baseline"));
    // order is fixed once opened
    assert_eq!(service.evaluation(&c.session_id).unwrap(), view);

    let err = service.judge(&c.session_id, &[("nope".into(), Verdict::Yummy)]).unwrap_err();
    assert!(matches!(err, ServiceError::UnknownEvaluationItem(_)));

    let verdict = |id: &str| if elicited.contains(id) { Verdict::Yummy } else { Verdict::NoWay };
    let first: Vec<(String, Verdict)> = view.items[..5].iter().map(|i| (i.id.clone(), verdict(&i.id))).collect();
    let partial = service.judge(&c.session_id, &first).unwrap();
    assert_eq!(partial.remaining, 15);
    assert!(partial.report.is_none());
    // resending is harmless, contradicting is not
    service.judge(&c.session_id, &first).unwrap();
    let flipped = match first[0].1 {
        Verdict::Yummy => Verdict::NoWay,
        Verdict::NoWay => Verdict::Yummy,
    };
    let err = service.judge(&c.session_id, &[(first[0].0.clone(), flipped)]).unwrap_err();
    assert!(matches!(err, ServiceError::AlreadyJudged(_)));

    let rest: Vec<(String, Verdict)> = view.items[5..].iter().map(|i| (i.id.clone(), verdict(&i.id))).collect();
    service.judge(&c.session_id, &rest).unwrap();

    // verdicts survive a restart
    let restarted = f.service();
    let view = restarted.evaluation(&c.session_id).unwrap();
    assert_eq!(view.remaining, 0);
    let report = view.report.unwrap();
    assert_eq!(report.total, 20);
    assert_eq!(report.yummy + report.no_way, 20);
    assert_eq!(report.elicited.rate, 1.0);
    assert_eq!(report.baseline.unwrap().rate, 0.0);
    assert_eq!(report.relative_improvement, None);
}

#[test]
fn unavailable_diet_is_reported() {
    let f = fixture_with(400, |c| c.diets = vec![DietType::Vegan]);
    let service = f.service();
    let err = service.create_session(&profile("halal")).unwrap_err();
    assert!(matches!(err, ServiceError::CatalogUnavailable(DietType::Halal)));
    assert_eq!(err.status(), 503);
}
