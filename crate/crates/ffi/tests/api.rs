//! Drives the exported `extern "C"` functions directly from Rust.

use std::ffi::{CStr, CString};
use std::ptr;

use nial_ffi::*;

fn last_error() -> String {
    let p = nial_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn write_config(dir: &std::path::Path, extra: &str) -> CString {
    let path = dir.join("run.conf");
    std::fs::write(
        &path,
        format!(
            "synth.classes = 3\nsynth.per_class = 20\nsynth.len = 32\nsynth.noise = 0.05\n\
             model.preset = tiny\ntrain.epochs = 3\ntrain.batch_size = 8\ntrain.lr = 0.003\n\
             train.seed = 4\n{extra}"
        ),
    )
    .unwrap();
    cstr(path.to_str().unwrap())
}

unsafe fn train(dir: &std::path::Path) -> (*mut NialModel, NialTrainSummary) {
    let cfg = write_config(dir, "");
    let over = [cstr("train.epochs=4")];
    let ptrs: Vec<_> = over.iter().map(|c| c.as_ptr()).collect();
    let mut model = ptr::null_mut();
    let mut summary = NialTrainSummary::default();
    let st = nial_train_from_config(cfg.as_ptr(), ptrs.as_ptr(), 1, &mut model, &mut summary);
    assert_eq!(st, NialStatus::Ok, "{}", last_error());
    (model, summary)
}

#[test]
fn train_predict_evaluate_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let (model, summary) = train(dir.path());
        assert_eq!(summary.epochs_run, 4, "override applied");
        assert!((1..=4).contains(&summary.best_epoch));
        assert!(summary.best_val_loss.is_finite());
        assert_eq!(nial_model_input_len(model), 32);
        assert_eq!(nial_model_num_classes(model), 3);
        assert_eq!(nial_model_num_outputs(model), 3);

        let mut ds = ptr::null_mut();
        assert_eq!(
            nial_dataset_synth(3, 10, 32, 0.05, 9, &mut ds),
            NialStatus::Ok
        );
        assert_eq!(nial_dataset_preprocess(ds, true, false), NialStatus::Ok);
        assert_eq!(nial_dataset_num_samples(ds), 30);
        assert_eq!(nial_dataset_signal_len(ds), 32);
        assert_eq!(nial_dataset_num_classes(ds), 3);

        let mut report = NialEvalReport::default();
        assert_eq!(nial_evaluate(model, ds, &mut report), NialStatus::Ok);
        assert_eq!(report.n_samples, 30);
        assert!((0.0..=1.0).contains(&report.accuracy));

        // Save, reload, and check the reloaded model agrees exactly.
        let path = cstr(dir.path().join("m.nial").to_str().unwrap());
        assert_eq!(nial_model_save(model, path.as_ptr()), NialStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(nial_model_load(path.as_ptr(), &mut loaded), NialStatus::Ok);
        let mut again = NialEvalReport::default();
        assert_eq!(nial_evaluate(loaded, ds, &mut again), NialStatus::Ok);
        assert_eq!(report, again);

        // predict == argmax of logits, and accuracy matches evaluate.
        let signals: Vec<f64> = (0..30)
            .flat_map(|i| {
                let mut row = vec![0.0; 32];
                row.iter_mut()
                    .enumerate()
                    .for_each(|(t, v)| *v = ((i * 7 + t) as f64 * 0.1).sin());
                row
            })
            .collect();
        let mut logits = vec![0.0; 90];
        assert_eq!(
            nial_model_logits(loaded, signals.as_ptr(), 30, 32, logits.as_mut_ptr(), 90),
            NialStatus::Ok
        );
        let mut labels = vec![usize::MAX; 30];
        assert_eq!(
            nial_model_predict(loaded, signals.as_ptr(), 30, 32, labels.as_mut_ptr()),
            NialStatus::Ok
        );
        for (i, &l) in labels.iter().enumerate() {
            let row = &logits[i * 3..i * 3 + 3];
            let best = (0..3).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            assert_eq!(l, best);
        }

        nial_model_free(loaded);
        nial_model_free(model);
        nial_dataset_free(ds);
    }
}

#[test]
fn from_arrays_and_csv_load_agree() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "0.1,0.2,0.3,0\n0.4,0.5,0.6,1\n").unwrap();
    unsafe {
        let mut a = ptr::null_mut();
        let p = cstr(csv.to_str().unwrap());
        assert_eq!(nial_dataset_load_csv(p.as_ptr(), 3, &mut a), NialStatus::Ok);
        let mut b = ptr::null_mut();
        let sig = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let lab = [0usize, 1];
        assert_eq!(
            nial_dataset_from_arrays(sig.as_ptr(), lab.as_ptr(), 2, 3, 2, &mut b),
            NialStatus::Ok
        );
        assert_eq!(nial_dataset_num_samples(a), nial_dataset_num_samples(b));
        assert_eq!(nial_dataset_num_classes(a), 2);

        let mut c = ptr::null_mut();
        assert_eq!(
            nial_dataset_load_csv(p.as_ptr(), 5, &mut c),
            NialStatus::Parse
        );
        assert!(last_error().starts_with("parse: "), "{}", last_error());
        assert!(c.is_null());
        nial_dataset_free(a);
        nial_dataset_free(b);
    }
}

#[test]
fn errors_map_to_categories() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        let missing = cstr(dir.path().join("nope.nial").to_str().unwrap());
        assert_eq!(nial_model_load(missing.as_ptr(), &mut m), NialStatus::Io);
        assert!(last_error().starts_with("io: "));

        let junk = dir.path().join("junk.nial");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = cstr(junk.to_str().unwrap());
        assert_eq!(
            nial_model_load(junk.as_ptr(), &mut m),
            NialStatus::CheckpointFormat
        );

        assert_eq!(
            nial_model_load(ptr::null(), &mut m),
            NialStatus::NullPointer
        );
        assert_eq!(last_error(), "null-pointer: path is NULL");
        assert_eq!(
            nial_model_load(missing.as_ptr(), ptr::null_mut()),
            NialStatus::Io,
            "the path is checked before the out-pointer is needed"
        );

        let bad = [0x66u8, 0xff, 0x00];
        assert_eq!(
            nial_model_load(bad.as_ptr().cast(), &mut m),
            NialStatus::InvalidUtf8
        );

        let mut ds = ptr::null_mut();
        assert_eq!(
            nial_dataset_synth(1, 5, 16, 0.1, 1, &mut ds),
            NialStatus::Config
        );

        let cfg = write_config(dir.path(), "train.bogus = 1\n");
        let mut model = ptr::null_mut();
        assert_eq!(
            nial_train_from_config(cfg.as_ptr(), ptr::null(), 0, &mut model, ptr::null_mut()),
            NialStatus::Config
        );
        assert!(model.is_null());
        assert_eq!(
            nial_train_from_config(cfg.as_ptr(), ptr::null(), 2, &mut model, ptr::null_mut()),
            NialStatus::NullPointer
        );

        // Getters and free tolerate NULL.
        assert_eq!(nial_model_input_len(ptr::null()), 0);
        assert_eq!(nial_dataset_num_samples(ptr::null()), 0);
        nial_model_free(ptr::null_mut());
        nial_dataset_free(ptr::null_mut());
    }
}

#[test]
fn predict_checks_shapes_and_buffers() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let (model, _) = train(dir.path());
        let x = vec![0.5; 2 * 32];
        let mut out = vec![0.0; 6];
        assert_eq!(
            nial_model_logits(model, x.as_ptr(), 2, 31, out.as_mut_ptr(), 6),
            NialStatus::Config
        );
        assert_eq!(
            nial_model_logits(model, x.as_ptr(), 2, 32, out.as_mut_ptr(), 5),
            NialStatus::BufferTooSmall
        );
        assert_eq!(
            nial_model_logits(model, x.as_ptr(), 0, 32, out.as_mut_ptr(), 6),
            NialStatus::EmptyDataset
        );
        let mut ds = ptr::null_mut();
        assert_eq!(
            nial_dataset_synth(3, 4, 16, 0.1, 1, &mut ds),
            NialStatus::Ok
        );
        let mut r = NialEvalReport::default();
        assert_eq!(nial_evaluate(model, ds, &mut r), NialStatus::Config);
        nial_dataset_free(ds);
        nial_model_free(model);
    }
}

#[test]
fn status_names_and_version() {
    let name = |s: i32| {
        unsafe { CStr::from_ptr(nial_status_name(s)) }
            .to_str()
            .unwrap()
    };
    assert_eq!(name(NialStatus::Ok as i32), "ok");
    assert_eq!(
        name(NialStatus::CheckpointVersion as i32),
        "checkpoint-version"
    );
    assert_eq!(name(NialStatus::Panic as i32), "panic");
    assert_eq!(name(-7), "unknown");
    let v = unsafe { CStr::from_ptr(nial_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn last_error_is_per_thread() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(
            nial_model_load(ptr::null(), &mut m),
            NialStatus::NullPointer
        );
    }
    std::thread::spawn(|| assert!(nial_last_error_message().is_null()))
        .join()
        .unwrap();
    assert!(!nial_last_error_message().is_null());
}
