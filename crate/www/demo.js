import init, { simulate, optimize, cost, Surrogate } from "./pkg/kol_demo.js";

const PHASES = 5;
const U_UPPER = 0.7;
const COLORS = { S: "#1f77b4", I: "#d62728", R: "#2ca02c", u: "#888" };

const $ = (id) => document.getElementById(id);
let surrogate = null;

function setup() {
  return JSON.stringify({
    model: "sir",
    params: { r0: Number($("r0").value), gamma: Number($("gamma").value) },
    grid: { t_star: 100.0, dt: 1.0 },
  });
}

function levels() {
  return [...document.querySelectorAll("#phases input")].map((el) => Number(el.value));
}

function status(text, isError = false) {
  $("status").textContent = text;
  $("status").className = isError ? "error" : "";
}

function buildSliders() {
  const box = $("phases");
  const initial = [0.0, 0.5, 0.5, 0.2, 0.0];
  for (let p = 0; p < PHASES; p++) {
    const row = document.createElement("div");
    row.className = "phase";
    const label = document.createElement("span");
    label.textContent = `phase ${p + 1}`;
    const input = document.createElement("input");
    Object.assign(input, { type: "range", min: 0, max: U_UPPER, step: 0.01, value: initial[p] });
    const value = document.createElement("span");
    value.textContent = input.value;
    input.addEventListener("input", () => {
      value.textContent = Number(input.value).toFixed(2);
      refresh();
    });
    row.append(label, input, value);
    box.append(row);
  }
}

function setLevels(values) {
  document.querySelectorAll("#phases .phase").forEach((row, i) => {
    const input = row.querySelector("input");
    input.value = values[i];
    row.lastChild.textContent = Number(values[i]).toFixed(2);
  });
}

function draw(truth, prediction) {
  const canvas = $("plot");
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 40;
  ctx.clearRect(0, 0, W, H);
  const t = truth.times;
  const x = (v) => pad + ((W - 2 * pad) * v) / t[t.length - 1];
  const y = (v) => H - pad - (H - 2 * pad) * v;

  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(pad, pad); ctx.lineTo(pad, H - pad); ctx.lineTo(W - pad, H - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.font = "12px system-ui";
  for (const v of [0, 0.25, 0.5, 0.75, 1]) ctx.fillText(v.toFixed(2), 4, y(v) + 4);
  for (const v of [0, 25, 50, 75, 100]) ctx.fillText(String(v), x(v) - 8, H - pad + 16);

  const line = (values, color, dash) => {
    ctx.strokeStyle = color;
    ctx.setLineDash(dash);
    ctx.lineWidth = 2;
    ctx.beginPath();
    values.forEach((v, k) => (k ? ctx.lineTo(x(t[k]), y(v)) : ctx.moveTo(x(t[k]), y(v))));
    ctx.stroke();
  };
  line(truth.control, COLORS.u, [2, 3]);
  truth.compartments.forEach((name, c) => line(truth.values[c], COLORS[name], []));
  if (prediction) {
    prediction.compartments.forEach((name, c) => line(prediction.values[c], COLORS[name], [8, 5]));
  }
  ctx.setLineDash([]);

  const items = truth.compartments.map(
    (n) => `<span><i class="swatch" style="border-color:${COLORS[n]}"></i>${n}</span>`
  );
  items.push(`<span><i class="swatch" style="border-color:${COLORS.u};border-top-style:dotted"></i>u(t)</span>`);
  if (prediction) items.push("<span>dashed: surrogate</span>");
  $("legend").innerHTML = items.join("");
}

function refresh() {
  try {
    const lv = JSON.stringify(levels());
    $("cost").textContent = cost(setup(), lv, Number($("ci").value), Number($("cu").value)).toExponential(4);
    if (surrogate) {
      const cmp = JSON.parse(surrogate.compare(lv));
      draw(cmp.truth, cmp.prediction);
      status(`${surrogate.summary()}; relative error on this schedule ${cmp.p_err.toExponential(2)}`);
    } else {
      draw(JSON.parse(simulate(setup(), lv)), null);
    }
  } catch (e) {
    status(String(e.message ?? e), true);
  }
}

function trainSurrogate() {
  status("training...");
  // Let the status repaint before the synchronous fit.
  setTimeout(() => {
    try {
      surrogate?.free();
      const options = JSON.stringify({
        phases: PHASES,
        size: Number($("size").value),
        seed: 1,
        kernel: { kind: "ntk", depth: 1, activation: $("kernel").value },
      });
      const t0 = performance.now();
      surrogate = new Surrogate(setup(), options);
      refresh();
      status(`${$("status").textContent} (trained in ${((performance.now() - t0) / 1000).toFixed(2)} s)`);
    } catch (e) {
      surrogate = null;
      status(String(e.message ?? e), true);
    }
  }, 10);
}

function optimizeSchedule() {
  status("optimizing...");
  setTimeout(() => {
    try {
      const options = JSON.stringify({
        phases: PHASES,
        c_i: Number($("ci").value),
        c_u: Number($("cu").value),
        u_upper: U_UPPER,
      });
      const r = JSON.parse(optimize(setup(), options));
      setLevels(r.levels);
      refresh();
      const note = r.converged ? "" : " (not converged)";
      status(`optimal cost ${r.objective.toExponential(4)} after ${r.evaluations} simulations${note}`);
    } catch (e) {
      status(String(e.message ?? e), true);
    }
  }, 10);
}

async function main() {
  await init();
  buildSliders();
  for (const id of ["r0", "gamma"]) {
    $(id).addEventListener("change", () => {
      surrogate?.free();
      surrogate = null;
      refresh();
    });
  }
  for (const id of ["ci", "cu"]) $(id).addEventListener("change", refresh);
  $("train").addEventListener("click", trainSurrogate);
  $("optimize").addEventListener("click", optimizeSchedule);
  status("ready: move the sliders, train a surrogate, or optimize the schedule");
  refresh();
}

main().catch((e) => status(`failed to start: ${e}`, true));
