// SPDX-License-Identifier: MIT OR Apache-2.0
import init, { simulate_and_segment, sweep, concentration_curve } from "./pkg/kcpd_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "12px system-ui";
  return { ctx, w: canvas.width, h: canvas.height, pad: 30 };
}

function drawTrace(view) {
  const { ctx, w, h, pad } = frame($("trace"));
  const ys = view.trace;
  const lo = Math.min(...ys), hi = Math.max(...ys);
  const x = (i) => pad + (i / (ys.length - 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo || 1)) * (h - 2 * pad);
  ctx.strokeStyle = "#555";
  ctx.beginPath();
  ys.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
  ctx.stroke();
  const marks = (cps, color, top) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    for (const tau of cps) {
      ctx.beginPath();
      ctx.moveTo(x(tau - 0.5), top ? pad : h / 2);
      ctx.lineTo(x(tau - 0.5), top ? h / 2 : h - pad);
      ctx.stroke();
    }
    ctx.lineWidth = 1;
  };
  marks(view.truth, "#2a6", true);
  marks(view.estimate, "#c33", false);
}

function drawStaircase(table) {
  const { ctx, w, h, pad } = frame($("staircase"));
  const rows = table.rows;
  const kmax = Math.max(1, ...rows.map((r) => r.k_est));
  const step = (w - 2 * pad) / rows.length;
  rows.forEach((r, i) => {
    const bh = (r.k_est / kmax) * (h - 2 * pad);
    ctx.fillStyle = "#36c";
    ctx.fillRect(pad + i * step + 4, h - pad - bh, step - 8, bh);
    ctx.fillStyle = "#222";
    ctx.fillText(`C=${r.C}`, pad + i * step + 4, h - pad + 14);
    ctx.fillText(`K=${r.k_est}`, pad + i * step + 4, h - pad - bh - 4);
  });
}

function drawTails(report) {
  const { ctx, w, h, pad } = frame($("tails"));
  const rows = report.rows;
  const xmax = rows[rows.length - 1].x || 1;
  const x = (v) => pad + (v / xmax) * (w - 2 * pad);
  const y = (p) => h - pad - p * (h - 2 * pad);
  const series = (key, color) => {
    ctx.strokeStyle = ctx.fillStyle = color;
    ctx.beginPath();
    rows.forEach((r, i) => (i ? ctx.lineTo(x(r.x), y(r[key])) : ctx.moveTo(x(r.x), y(r[key]))));
    ctx.stroke();
    rows.forEach((r) => ctx.fillRect(x(r.x) - 3, y(r[key]) - 3, 6, 6));
  };
  series("bound_clipped", "#999");
  series("empirical_tail", "#36c");
  ctx.fillStyle = "#222";
  ctx.fillText("1", 8, y(1) + 4);
  ctx.fillText("0", 8, y(0) + 4);
  ctx.fillText(`x (max ${xmax.toFixed(1)})`, w - pad - 80, h - 8);
}

function guarded(fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      $("summary").textContent = `error: ${e.message ?? e}`;
    }
  };
}

await init();

$("run").onclick = guarded(() => {
  const view = JSON.parse(simulate_and_segment(num("t"), num("d"), num("m"), num("delta"), num("c"), num("seed")));
  drawTrace(view);
  $("summary").textContent =
    `K true ${view.k_true}, K estimated ${view.k_est}, beta ${view.beta.toFixed(3)}\n` +
    `Pk ${view.pk.toFixed(4)}, WindowDiff ${view.window_diff.toFixed(4)}, objective ${view.objective.toFixed(3)}`;
});

$("sweep").onclick = guarded(() => {
  drawStaircase(JSON.parse(sweep(num("t"), num("d"), num("m"), num("delta"), $("grid").value, num("seed"))));
});

$("conc").onclick = guarded(() => {
  drawTails(JSON.parse(concentration_curve(num("n"), num("cm"), 8, num("reps"), num("seed"))));
});

$("run").click();
