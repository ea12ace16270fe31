use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cascade_core::evalkit::{box_iou, image_tensor, CascadeModel as _, EvalOptions};
use cascade_core::geometry::BBox;
use cascade_core::netcore::{save_checkpoint, AlignmentMode, Checkpoint, ModelParams};
use cascade_core::scenegen::{syn2real_like, DatasetManifest, DomainTag, LabelMode, RgbImage, Split};
use cascade_ffi::*;

fn last_error() -> String {
    let mut need = 0usize;
    unsafe {
        assert_eq!(
            cascade_last_error_message(ptr::null_mut(), 0, &mut need),
            CascadeStatus::Ok
        );
        let mut buf = vec![0 as c_char; need];
        assert_eq!(
            cascade_last_error_message(buf.as_mut_ptr(), buf.len(), &mut need),
            CascadeStatus::Ok
        );
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn image() -> RgbImage {
    let m = DatasetManifest::new(
        1,
        DomainTag::Target,
        LabelMode::Full,
        4,
        Split::Val,
        syn2real_like(true).target,
    );
    m.generate(0).unwrap().1
}

fn model_file(dir: &Path) -> (CString, ModelParams) {
    let params = ModelParams::init(3, AlignmentMode::ClassWise);
    let path = dir.join("checkpoint.bin");
    let checkpoint = Checkpoint {
        iteration: 0,
        momentum: params.clone(),
        params: params.clone(),
    };
    save_checkpoint(&path, &checkpoint).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), params)
}

#[test]
fn box_iou_matches_core() {
    let a = [0.0, 0.0, 10.0, 10.0];
    let b = [5.0, 5.0, 15.0, 15.0];
    let mut out = -1.0;
    unsafe {
        assert_eq!(cascade_box_iou(a.as_ptr(), b.as_ptr(), &mut out), CascadeStatus::Ok);
    }
    assert!((out - 25.0 / 175.0).abs() < 1e-15);
    assert_eq!(
        out,
        box_iou(&BBox::new(0.0, 0.0, 10.0, 10.0), &BBox::new(5.0, 5.0, 15.0, 15.0))
    );

    let bad = [3.0, 0.0, 1.0, 1.0];
    unsafe {
        assert_eq!(
            cascade_box_iou(bad.as_ptr(), b.as_ptr(), &mut out),
            CascadeStatus::InvalidArgument
        );
        assert!(last_error().contains("malformed"));
        assert_eq!(
            cascade_box_iou(ptr::null(), b.as_ptr(), &mut out),
            CascadeStatus::NullPointer
        );
    }
}

#[test]
fn errors_are_reported_per_call() {
    let missing = CString::new("/nonexistent/checkpoint.bin").unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(
            cascade_model_load(missing.as_ptr(), &mut model),
            CascadeStatus::NotFound
        );
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        let mut need = 0;
        let mut tiny = [0 as c_char; 2];
        assert_eq!(
            cascade_last_error_message(tiny.as_mut_ptr(), 2, &mut need),
            CascadeStatus::BufferTooSmall
        );
        assert!(need > 2);

        let mut out = 0.0;
        let a = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(cascade_box_iou(a.as_ptr(), a.as_ptr(), &mut out), CascadeStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!(cascade_model_load(ptr::null(), &mut model), CascadeStatus::NullPointer);
        cascade_model_free(ptr::null_mut());
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { cascade_model_load(c.as_ptr(), &mut model) };
    assert_ne!(status, CascadeStatus::Ok);
    assert!(model.is_null());
}

#[test]
fn detect_matches_the_core_model() {
    let dir = tempfile::tempdir().unwrap();
    let (path, params) = model_file(dir.path());
    let img = image();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(cascade_model_load(path.as_ptr(), &mut model), CascadeStatus::Ok);
        assert_eq!(cascade_model_set_score_threshold(model, 0.0), CascadeStatus::Ok);
        assert_eq!(
            cascade_model_set_score_threshold(model, 1.5),
            CascadeStatus::InvalidArgument
        );

        let mut count = 0;
        assert_eq!(
            cascade_model_detect(model, img.data.as_ptr(), img.data.len(), ptr::null_mut(), 0, &mut count),
            if count_expected(&params, &img) == 0 {
                CascadeStatus::Ok
            } else {
                CascadeStatus::BufferTooSmall
            }
        );
        let mut dets = vec![CascadeDetection::default(); count];
        let mut again = 0;
        assert_eq!(
            cascade_model_detect(
                model,
                img.data.as_ptr(),
                img.data.len(),
                dets.as_mut_ptr(),
                dets.len(),
                &mut again
            ),
            CascadeStatus::Ok
        );
        assert_eq!(again, count);

        let options = EvalOptions {
            score_threshold: 0.0,
            ..EvalOptions::default()
        };
        let features = params.features(&image_tensor(&img)).unwrap();
        let expected = params.detect(&features, &options).unwrap();
        assert!(!expected.is_empty());
        assert_eq!(expected.len(), count);
        for (d, e) in dets.iter().zip(&expected) {
            assert_eq!([d.x_min, d.y_min, d.x_max, d.y_max], e.bbox.to_array());
            assert_eq!((d.class_id as usize, d.score), (e.class_id, e.score));
            let (_, pose) = params.attributes(0, &features, &e.bbox, e.class_id).unwrap();
            assert_eq!((d.angle, d.depth), (pose.angle, pose.depth));
        }
        assert!(dets.windows(2).all(|w| w[0].score >= w[1].score));

        assert_eq!(
            cascade_model_detect(model, img.data.as_ptr(), 10, dets.as_mut_ptr(), dets.len(), &mut again),
            CascadeStatus::InvalidArgument
        );
        assert!(last_error().contains("12288"));
        cascade_model_free(model);
    }
}

fn count_expected(params: &ModelParams, img: &RgbImage) -> usize {
    let options = EvalOptions {
        score_threshold: 0.0,
        ..EvalOptions::default()
    };
    let features = params.features(&image_tensor(img)).unwrap();
    params.detect(&features, &options).unwrap().len()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cascade_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cascade.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "cascade_model_load",
        "cascade_model_free",
        "cascade_model_detect",
        "cascade_box_iou",
        "cascade_last_error_message",
        "typedef struct CascadeModel CascadeModel;",
        "CASCADE_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(text.contains(name), "{name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"cascade.h\"\nint main(void) { double a[4] = {0, 0, 1, 1}; double o; \
         return cascade_box_iou(a, a, &o) == CASCADE_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler, skipping syntax check");
        return;
    };
    assert!(status.success());
}
