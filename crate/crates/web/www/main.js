import init, { param_counts, segment_plan, metric_curves } from "./pkg/longdoc_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(el, f) {
  try {
    el.classList.remove("err");
    f();
  } catch (e) {
    el.classList.add("err");
    el.textContent = String(e);
  }
}

function updateParams() {
  const out = $("params");
  show(out, () => {
    const r = JSON.parse(param_counts(num("p-blocks"), num("p-hidden"), num("p-heads"),
      num("p-inter"), num("p-vocab"), num("p-labels")));
    const fmt = (n) => n.toLocaleString("en-US");
    out.textContent = `encoder ${fmt(r.encoder)}, label attention ${fmt(r.attention)}, ` +
      `classifiers ${fmt(r.classifier)}, total ${fmt(r.total)}`;
  });
}

function updateWindows() {
  const out = $("windows");
  show(out, () => {
    const p = JSON.parse(segment_plan(num("w-len"), num("w-seg"), num("w-stride")));
    const width = 80;
    const scale = width / p.padded_len;
    const lines = [`${p.len} tokens padded to ${p.padded_len}, ${p.segments.length} windows`];
    p.segments.forEach(([s, e], w) => {
      let row = "";
      for (let c = 0; c < width; c++) {
        const pos = Math.floor(c / scale);
        if (pos < s || pos >= e) row += " ";
        else if (pos >= p.len) row += ".";
        else row += p.owner[pos] === w ? "#" : "-";
      }
      lines.push(`${String(w).padStart(3)} [${s}, ${e}) |${row}|`);
    });
    lines.push("# tokens read from this window, - covered but read elsewhere, . padding");
    out.textContent = lines.join("\n");
  });
}

function plot(canvas, points, xLabel, yLabel) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad / 2, w - 1.5 * pad, h - 1.5 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(xLabel, w / 2 - 10, h - 5);
  ctx.fillText(yLabel, 2, 12);
  const x = (v) => pad + v * (w - 1.5 * pad);
  const y = (v) => h - pad - v * (h - 1.5 * pad);
  ctx.strokeStyle = "#06c";
  ctx.beginPath();
  points.forEach(([a, b], i) => (i ? ctx.lineTo(x(a), y(b)) : ctx.moveTo(x(a), y(b))));
  ctx.stroke();
}

function updateCurves() {
  const out = $("summary");
  show(out, () => {
    const c = JSON.parse(metric_curves($("pairs").value));
    plot($("roc"), c.roc, "FPR", "TPR");
    plot($("pr"), c.pr, "recall", "precision");
    const f = (v) => (v === null ? "NA" : v.toFixed(4));
    out.textContent = `ROC-AUC ${f(c.roc_auc)}, PR-AUC ${f(c.pr_auc)}; best threshold ${c.threshold.toFixed(2)} ` +
      `gives F1 ${f(c.micro_f1)} (P ${f(c.micro_precision)}, R ${f(c.micro_recall)})`;
  });
}

await init();
for (const id of ["p-blocks", "p-hidden", "p-heads", "p-inter", "p-vocab", "p-labels"]) $(id).addEventListener("input", updateParams);
for (const id of ["w-len", "w-seg", "w-stride"]) $(id).addEventListener("input", updateWindows);
$("pairs").addEventListener("input", updateCurves);
updateParams();
updateWindows();
updateCurves();
