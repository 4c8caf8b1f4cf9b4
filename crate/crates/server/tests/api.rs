use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::NaiveDate;
use clinpath::{default_group_table, Dataset, DayStatus, LabResult, Patient, Sex};
use clinpath_server::{router, AppState, ConfigStore, PresentationConfig};
use serde_json::Value;
use tower::ServiceExt;

fn d(n: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 7, n).unwrap()
}

fn result(patient: &str, test: &str, day: u32, value: f64) -> LabResult<f64> {
    LabResult {
        patient_id: patient.into(),
        day: d(day),
        test: test.into(),
        value,
        unit: "g/dL".into(),
        ref_min: 12.0,
        ref_max: 16.0,
        institution: "HF1".into(),
    }
}

fn dataset() -> Dataset<f64> {
    let mut a = Patient::new("A");
    a.sex = Sex::F;
    a.age = Some(61);
    a.day_status.insert(d(1), DayStatus::Hospitalized);
    a.day_status.insert(d(9), DayStatus::Died);
    let b = Patient::new("B");
    let mut results = vec![
        result("A", "Hb", 1, 10.0),
        result("A", "Hb", 3, 16.0),
        result("A", "Hb", 9, 14.0),
        result("A", "HCT", 3, 13.0),
        result("A", "cTnI", 9, 20.0),
        result("B", "Hb", 2, 13.0),
    ];
    results.sort_by(|x, y| x.key().cmp(&y.key()));
    let patients = [("A".to_owned(), a), ("B".to_owned(), b)].into_iter().collect();
    let mut ds = Dataset::from_parts(patients, results, BTreeMap::new(), "test".into()).unwrap();
    ds.recompute_cuts();
    ds
}

fn app() -> Router {
    let state = AppState::new(dataset(), default_group_table(), ConfigStore::in_memory(PresentationConfig::default()));
    router(Arc::new(state), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ct = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_owned());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(ct.as_deref(), Some("application/json"), "{uri}");
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

fn column_days(path: &Value) -> Vec<String> {
    path["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["day"].as_str().unwrap().to_owned())
        .collect()
}

#[tokio::test]
async fn patients_listing() {
    let app = app();
    let (status, body) = get(&app, "/v1/patients").await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["patient_id"], "A");
    assert_eq!(list[0]["result_count"], 5);
    assert_eq!(list[0]["sex"], "F");
    assert_eq!(list[0]["first_day"], "2020-07-01");
    assert_eq!(list[0]["last_day"], "2020-07-09");
    assert_eq!(list[1]["result_count"], 1);

    let empty = AppState::new(
        Dataset::<f64>::default(),
        default_group_table(),
        ConfigStore::in_memory(PresentationConfig::default()),
    );
    let (_, body) = get(&router(Arc::new(empty), None), "/v1/patients").await;
    assert_eq!(body, Value::Array(vec![]));
}

#[tokio::test]
async fn path_filters_and_order() {
    let app = app();
    let (status, sparse) = get(&app, "/v1/patients/A/path?only_days_with_tests=true").await;
    assert_eq!(status, StatusCode::OK);
    let n = sparse["columns"].as_array().unwrap().len();
    assert_eq!(n, 3);
    for col in 0..n {
        assert!(sparse["cells"].as_array().unwrap().iter().any(|c| c["column"] == col));
    }

    let (_, dense) = get(&app, "/v1/patients/A/path").await;
    assert_eq!(dense["columns"].as_array().unwrap().len(), 9);
    assert_eq!(dense["columns"][0]["status"], "Hospitalized");
    assert_eq!(dense["columns"][8]["status"], "Died");

    let (_, asc) = get(&app, "/v1/patients/A/path?order=asc").await;
    let (_, desc) = get(&app, "/v1/patients/A/path?order=desc").await;
    let mut reversed = column_days(&desc);
    reversed.reverse();
    assert_eq!(column_days(&asc), reversed);

    let (_, hb) = get(&app, "/v1/patients/A/path?tests=Hb").await;
    assert_eq!(hb["rows"].as_array().unwrap().len(), 1);
    assert_eq!(hb["rows"][0]["acronym"], "Hb");

    let (_, cardio) = get(&app, "/v1/patients/A/path?groups=Cardio%20Evaluation").await;
    assert_eq!(cardio["rows"][0]["acronym"], "cTnI");

    let (_, window) = get(&app, "/v1/patients/A/path?from=2020-07-03&to=2020-07-03").await;
    assert_eq!(column_days(&window), ["2020-07-03"]);
}

#[tokio::test]
async fn path_errors() {
    let app = app();
    let (status, body) = get(&app, "/v1/patients/Z/path").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["status"], 404);
    assert!(body["error"].as_str().unwrap().contains("Z"));
    for bad in [
        "/v1/patients/A/path?from=03/07/2020",
        "/v1/patients/A/path?order=sideways",
        "/v1/patients/A/path?from=2020-07-05&to=2020-07-01",
        "/v1/patients/A/path?only_days_with_tests=maybe",
    ] {
        let (status, body) = get(&app, bad).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(body["status"], 400);
    }
    let (status, _) = get(&app, "/v1/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn single_series() {
    let app = app();
    let (status, s) = get(&app, "/v1/patients/A/tests/Hb/series").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["test"], "Hb");
    assert_eq!(s["points"].as_array().unwrap().len(), 3);
    assert_eq!(s["overlay"]["ref_min"], 12.0);
    assert_eq!(s["overlay"]["ref_max"], 16.0);
    assert!(s["overlay"].as_object().unwrap().contains_key("low_cut"));
    assert!(s["overlay"].as_object().unwrap().contains_key("high_cut"));
    // 10 -> 16 is +60%, below the default threshold.
    let flagged: Vec<_> = s["points"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["relevant_change"] == true)
        .map(|p| p["day"].clone())
        .collect();
    assert_eq!(Value::Array(flagged), s["relevant_days"]);

    let (status, _) = get(&app, "/v1/patients/A/tests/PLT/series").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/v1/patients/A/tests/Hb/series?to=tomorrow").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn combined_series() {
    let app = app();
    let (status, bundle) = get(&app, "/v1/patients/A/series?tests=Hb,HCT").await;
    assert_eq!(status, StatusCode::OK);
    let series = bundle["series"].as_array().unwrap();
    assert_eq!(series.len(), 2);
    assert_eq!(series[0]["test"], "Hb");
    assert_eq!(series[1]["test"], "HCT");
    let (status, _) = get(&app, "/v1/patients/A/series").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn summaries_and_lookups() {
    let app = app();
    let (_, sums) = get(&app, "/v1/patients/A/summaries").await;
    let sums = sums.as_array().unwrap();
    assert_eq!(sums.len(), 3);
    assert_eq!(sums[1]["day"], "2020-07-03");
    assert_eq!(sums[1]["test_count"], 2);
    let (_, groups) = get(&app, "/v1/groups").await;
    assert_eq!(groups.as_array().unwrap().len(), 12);
    let (_, cats) = get(&app, "/v1/categories").await;
    assert_eq!(cats[4]["code"], "VH");
}

#[tokio::test]
async fn config_round_trip_and_threshold() {
    let app = app();
    let (status, original) = get(&app, "/v1/config").await;
    assert_eq!(status, StatusCode::OK);

    let mut updated = original.clone();
    updated["theme"] = "Dark".into();
    updated["rc_threshold_percent"] = 50.0.into();
    let (status, echoed) = call(&app, Method::PUT, "/v1/config", Some(updated.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(echoed, updated);
    let (_, fetched) = get(&app, "/v1/config").await;
    assert_eq!(fetched, updated);

    // +60% on Hb (10 -> 16) now counts.
    let (_, path) = get(&app, "/v1/patients/A/path?tests=Hb").await;
    let flagged = path["cells"].as_array().unwrap().iter().filter(|c| c["relevant_change"] == true).count();
    assert_eq!(flagged, 1);
}

#[tokio::test]
async fn config_validation() {
    let app = app();
    let (_, original) = get(&app, "/v1/config").await;

    let mut four = original.clone();
    four["category_colors"].as_object_mut().unwrap().remove("Low");
    let (status, body) = call(&app, Method::PUT, "/v1/config", Some(four.to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["status"], 422);

    for threshold in [0.0, -1.0] {
        let mut bad = original.clone();
        bad["rc_threshold_percent"] = threshold.into();
        let (status, _) = call(&app, Method::PUT, "/v1/config", Some(bad.to_string())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    }

    let mut unknown = original.clone();
    unknown["status_colors"]["Vacation"] = "#000000".into();
    let (status, _) = call(&app, Method::PUT, "/v1/config", Some(unknown.to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = call(&app, Method::PUT, "/v1/config", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, after) = get(&app, "/v1/config").await;
    assert_eq!(after, original);
}

#[tokio::test]
async fn dataset_is_never_mutated() {
    let state = Arc::new(AppState::new(
        dataset(),
        default_group_table(),
        ConfigStore::in_memory(PresentationConfig::default()),
    ));
    let before = (*state.dataset).clone();
    let app = router(state.clone(), None);
    for uri in [
        "/v1/patients",
        "/v1/patients/A/path?order=desc&only_days_with_tests=1",
        "/v1/patients/A/tests/Hb/series",
        "/v1/patients/A/summaries",
    ] {
        let (a, first) = get(&app, uri).await;
        let (b, second) = get(&app, uri).await;
        assert_eq!(a, b);
        assert_eq!(first, second, "{uri}");
    }
    assert_eq!(*state.dataset, before);
}

#[tokio::test]
async fn rational_backend_serves_the_same_shapes() {
    use clinpath::Rational64;
    let ds = dataset();
    let exact: Vec<LabResult<Rational64>> = ds
        .results()
        .iter()
        .map(|r| LabResult {
            patient_id: r.patient_id.clone(),
            day: r.day,
            test: r.test.clone(),
            value: Rational64::from_integer(r.value as i64),
            unit: r.unit.clone(),
            ref_min: Rational64::from_integer(12),
            ref_max: Rational64::from_integer(16),
            institution: r.institution.clone(),
        })
        .collect();
    let mut exact_ds = Dataset::from_parts(ds.patients().clone(), exact, BTreeMap::new(), "test".into()).unwrap();
    exact_ds.recompute_cuts();
    let app = router(
        Arc::new(AppState::new(exact_ds, default_group_table(), ConfigStore::in_memory(PresentationConfig::default()))),
        None,
    );
    let (_, float_path) = get(&self::app(), "/v1/patients/A/path").await;
    let (status, exact_path) = get(&app, "/v1/patients/A/path").await;
    assert_eq!(status, StatusCode::OK);
    let cats = |p: &Value| -> Vec<Value> { p["cells"].as_array().unwrap().iter().map(|c| c["category"].clone()).collect() };
    assert_eq!(cats(&float_path), cats(&exact_path));
}

#[tokio::test]
async fn static_ui_fallback() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let state = AppState::new(dataset(), default_group_table(), ConfigStore::in_memory(PresentationConfig::default()));
    let app = router(Arc::new(state), Some(dir.path().to_path_buf()));
    let resp = app
        .clone()
        .oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&bytes[..], b"<html>ui</html>");
    let (status, _) = get(&app, "/v1/patients").await;
    assert_eq!(status, StatusCode::OK);
}
