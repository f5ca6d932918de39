import init, { Demo } from "./pkg/airfuse_demo.js";

const SCALE = 8;
const STOPS = [
  [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
];
const $ = (id) => document.getElementById(id);

let demo = null;
let range = [0, 1];

function color(t) {
  if (!Number.isFinite(t)) return [200, 200, 200];
  t = Math.min(1, Math.max(0, t)) * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(t));
  const f = t - i;
  return STOPS[i].map((c, k) => Math.round(c + f * (STOPS[i + 1][k] - c)));
}

function draw(id, values, lo, hi) {
  const rows = demo.n_rows, cols = demo.n_cols;
  const canvas = $(id);
  canvas.width = cols * SCALE;
  canvas.height = rows * SCALE;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(cols, rows);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      // row 0 is southernmost; canvas rows run north to south
      const [R, G, B] = color((values[r * cols + c] - lo) / (hi - lo));
      const p = ((rows - 1 - r) * cols + c) * 4;
      img.data.set([R, G, B, 255], p);
    }
  }
  const tmp = new OffscreenCanvas(cols, rows);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
  const sites = demo.sites();
  for (let i = 0; i < sites.length; i += 3) {
    const x = sites[i] * canvas.width, y = (1 - sites[i + 1]) * canvas.height;
    const [R, G, B] = color((sites[i + 2] - lo) / (hi - lo));
    ctx.beginPath();
    ctx.arc(x, y, 4, 0, 2 * Math.PI);
    ctx.fillStyle = `rgb(${R},${G},${B})`;
    ctx.fill();
    ctx.strokeStyle = "#fff";
    ctx.stroke();
  }
}

function extent(v) {
  let lo = Infinity, hi = -Infinity;
  for (const x of v) if (Number.isFinite(x)) { lo = Math.min(lo, x); hi = Math.max(hi, x); }
  return hi > lo ? [lo, hi] : [lo - 1, hi + 1];
}

function showIdw() {
  const phi = +$("phi").value;
  $("phi-v").textContent = phi.toFixed(2);
  draw("idw", demo.idw(phi, 0), ...range);
  $("idw-rmse").textContent = demo.idw_loo_rmse(phi).toFixed(3);
}

function showUk() {
  const n = +$("nugget").value, s = +$("sill").value, r = +$("range").value;
  $("nugget-v").textContent = n.toFixed(1);
  $("sill-v").textContent = s.toFixed(1);
  $("range-v").textContent = r.toFixed(0);
  const out = demo.kriging(n, s, r);
  const cells = demo.n_rows * demo.n_cols;
  if ($("uk-layer").value === "mean") {
    draw("uk", out.subarray(0, cells), ...range);
  } else {
    const sd = out.subarray(cells);
    draw("uk", sd, ...extent(sd));
  }
}

function showVariogram(fit) {
  const bins = +$("bins").value;
  $("bins-v").textContent = bins;
  const v = demo.variogram(bins);
  const canvas = $("vg");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pad = 36, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  let maxLag = 0, maxG = 0;
  for (let i = 0; i < v.length; i += 3) { maxLag = Math.max(maxLag, v[i]); maxG = Math.max(maxG, v[i + 1]); }
  if (fit) maxG = Math.max(maxG, fit[0] + fit[1]);
  maxLag *= 1.05; maxG *= 1.1;
  const X = (x) => pad + (x / maxLag) * w, Y = (y) => pad + h - (y / maxG) * h;
  ctx.strokeStyle = "#333";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#333";
  ctx.fillText("lag (km)", pad + w / 2 - 20, canvas.height - 8);
  ctx.fillText(maxLag.toFixed(0), pad + w - 20, pad + h + 14);
  ctx.fillText(maxG.toFixed(1), 4, pad + 4);
  ctx.fillText("0", pad - 12, pad + h);
  for (let i = 0; i < v.length; i += 3) {
    ctx.beginPath();
    ctx.arc(X(v[i]), Y(v[i + 1]), 2 + Math.sqrt(v[i + 2]) / 4, 0, 2 * Math.PI);
    ctx.fillStyle = "#3b528b";
    ctx.fill();
  }
  if (fit) {
    const [tau2, sigma2, rng] = fit;
    ctx.beginPath();
    for (let k = 1; k <= 100; k++) {
      const d = (k / 100) * maxLag;
      const g = tau2 + sigma2 * (1 - Math.exp(-d / rng));
      k === 1 ? ctx.moveTo(X(d), Y(g)) : ctx.lineTo(X(d), Y(g));
    }
    ctx.strokeStyle = "#e4572e";
    ctx.stroke();
  }
}

function regenerate() {
  const n = +$("nsites").value;
  $("nsites-v").textContent = n;
  $("status").textContent = "generating...";
  setTimeout(() => {
    demo?.free();
    demo = new Demo(+$("seed").value >>> 0, n);
    const truth = demo.truth();
    range = extent(truth);
    draw("truth", truth, ...range);
    $("legend").textContent = `Colour scale ${range[0].toFixed(1)} to ${range[1].toFixed(1)} µg/m³`;
    showIdw();
    showUk();
    showVariogram(null);
    $("fit-out").textContent = "";
    $("status").textContent = "";
  }, 10);
}

function fitVariogram() {
  try {
    const fit = demo.fit_variogram(+$("bins").value);
    $("fit-out").textContent = `nugget ${fit[0].toFixed(2)}, partial sill ${fit[1].toFixed(2)}, range ${fit[2].toFixed(0)} km`;
    $("nugget").value = Math.min(6, fit[0]);
    $("sill").value = Math.min(10, Math.max(0.1, fit[1]));
    $("range").value = Math.min(1000, Math.max(10, fit[2]));
    showVariogram(fit);
    showUk();
  } catch (e) {
    $("fit-out").textContent = String(e);
  }
}

await init();
$("phi").addEventListener("input", showIdw);
for (const id of ["nugget", "sill", "range", "uk-layer"]) $(id).addEventListener("input", showUk);
$("bins").addEventListener("input", () => showVariogram(null));
$("fit").addEventListener("click", fitVariogram);
$("regen").addEventListener("click", regenerate);
$("nsites").addEventListener("input", () => ($("nsites-v").textContent = $("nsites").value));
regenerate();
