//! Browser bindings for the landscape demo. The page in `www/` loads the
//! generated module and calls [`WebDemo`]; results cross the boundary as
//! JSON strings or flat float arrays.

pub mod demo;

use wasm_bindgen::prelude::*;

use demo::Demo;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct WebDemo {
    inner: Demo,
}

#[wasm_bindgen]
impl WebDemo {
    /// Loads the embedded noise model.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<WebDemo, JsError> {
        Ok(Self {
            inner: Demo::embedded().map_err(js_err)?,
        })
    }

    /// `[lo_x, lo_y, hi_x, hi_y]` of the plotted region.
    pub fn view(&self) -> Vec<f64> {
        let (lo, hi) = demo::VIEW;
        vec![lo[0], lo[1], hi[0], hi[1]]
    }

    /// Row-major grid of capped potential values over the view.
    pub fn landscape(&self, nx: usize, ny: usize, cap: f64) -> Result<Vec<f64>, JsError> {
        Ok(self.inner.landscape(nx, ny, cap).map_err(js_err)?.values)
    }

    pub fn landmarks(&self) -> Result<String, JsError> {
        serde_json::to_string(&self.inner.landmarks()).map_err(js_err)
    }

    pub fn compare(&self, x: f64, y: f64, lambda: f64) -> Result<String, JsError> {
        let paths = self.inner.compare([x, y], lambda).map_err(js_err)?;
        serde_json::to_string(&paths).map_err(js_err)
    }

    /// A non-positive `clip_factor` turns step clipping off.
    pub fn sweep(&self, x: f64, y: f64, lambdas: Vec<f64>, clip_factor: f64) -> Result<String, JsError> {
        let clip = (clip_factor > 0.0).then_some(clip_factor);
        let rows = self.inner.sweep([x, y], &lambdas, clip).map_err(js_err)?;
        serde_json::to_string(&rows).map_err(js_err)
    }
}
