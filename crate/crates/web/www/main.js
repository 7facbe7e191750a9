import init, { Demo, explore_joint_diag } from "./pkg/dfmnmf_web.js";

const $ = (id) => document.getElementById(id);
const status = (msg) => { $("status").textContent = msg; };

let demo = null;
let audio = null;

// Let the status line paint before a long synchronous call.
const nextFrame = () => new Promise((r) => requestAnimationFrame(() => setTimeout(r, 0)));

async function busy(msg, fn) {
  status(msg);
  await nextFrame();
  try {
    fn();
  } catch (e) {
    status("error: " + e);
    return;
  }
  status("ready");
}

function fillSignals() {
  const sel = $("spec-which");
  sel.innerHTML = "";
  const add = (value, label) => {
    const o = document.createElement("option");
    o.value = value;
    o.textContent = label;
    sel.appendChild(o);
  };
  add("mixture:0", "mixture");
  for (let n = 0; n < demo.n_sources(); n++) add(`image:${n}`, `true image ${n}`);
  if (demo.estimate(0).length) {
    for (let n = 0; n < demo.n_sources(); n++) add(`estimate:${n}`, `estimate ${n}`);
  }
}

function simulateScene() {
  busy("simulating...", () => {
    if (demo) demo.free();
    demo = new Demo(Number($("n-src").value), Number($("dur").value), BigInt($("scene-seed").value));
    $("results").innerHTML = "";
    clearCanvas($("cost"));
    fillSignals();
    for (const id of ["separate", "spec-show", "spec-play"]) $(id).disabled = false;
  });
}

function separate() {
  const method = $("method").value;
  const iters = Number($("iters").value);
  busy(`separating with ${method}, ${iters} iterations...`, () => {
    const r = JSON.parse(demo.separate(method, iters, BigInt($("init-seed").value)));
    const rows = r.sdr_db.map((s, n) =>
      `<tr><td>${n}</td><td>${r.permutation[n]}</td><td>${s.toFixed(2)}</td><td>${r.improvement_db[n].toFixed(2)}</td></tr>`
    ).join("");
    $("results").innerHTML =
      `<p>${r.method} on ${r.channels} channels: ${r.iterations} iterations in ${r.seconds.toFixed(2)} s,
       mean SDR improvement <b>${r.mean_improvement_db.toFixed(2)} dB</b></p>
       <table><tr><th>source</th><th>estimate</th><th>SDR dB</th><th>improvement dB</th></tr>${rows}</table>`;
    drawCost($("cost"), r.cost_trace);
    fillSignals();
  });
}

function clearCanvas(c) {
  c.getContext("2d").clearRect(0, 0, c.width, c.height);
}

function drawCost(c, trace) {
  const g = c.getContext("2d");
  clearCanvas(c);
  if (trace.length < 2) return;
  const lo = Math.min(...trace), hi = Math.max(...trace);
  const span = hi - lo || 1;
  g.strokeStyle = "#2b6cb0";
  g.beginPath();
  trace.forEach((v, k) => {
    const x = 30 + (k / (trace.length - 1)) * (c.width - 40);
    const y = 10 + (1 - (v - lo) / span) * (c.height - 30);
    k ? g.lineTo(x, y) : g.moveTo(x, y);
  });
  g.stroke();
  g.fillStyle = "#555";
  g.fillText("cost per iteration", 34, c.height - 6);
}

function selected() {
  const [which, n] = $("spec-which").value.split(":");
  return { which, n: Number(n) };
}

function showSpectrogram() {
  busy("computing spectrogram...", () => {
    const { which, n } = selected();
    const s = demo.spectrogram(which, n);
    const bins = demo.n_bins();
    const frames = s.length / bins;
    const c = $("spec");
    c.width = frames;
    c.height = bins;
    c.style.width = Math.max(600, frames) + "px";
    const g = c.getContext("2d");
    const img = g.createImageData(frames, bins);
    for (let j = 0; j < frames; j++) {
      for (let i = 0; i < bins; i++) {
        const v = s[j * bins + i];
        const p = ((bins - 1 - i) * frames + j) * 4;
        img.data[p] = 255 * Math.min(1, 1.6 * v);
        img.data[p + 1] = 255 * Math.max(0, 1.6 * v - 0.6);
        img.data[p + 2] = 255 * (0.3 + 0.4 * v) * (1 - v);
        img.data[p + 3] = 255;
      }
    }
    g.putImageData(img, 0, 0);
  });
}

function play() {
  const { which, n } = selected();
  const x = which === "mixture" ? demo.mixture() : which === "image" ? demo.image(n) : demo.estimate(n);
  if (!x.length) return;
  audio = audio || new AudioContext();
  const peak = x.reduce((m, v) => Math.max(m, Math.abs(v)), 1e-9);
  const buf = audio.createBuffer(1, x.length, demo.sample_rate());
  buf.getChannelData(0).set(x.map((v) => (0.9 * v) / peak));
  const src = audio.createBufferSource();
  src.buffer = buf;
  src.connect(audio.destination);
  src.start();
}

function jointDiag() {
  busy("checking...", () => {
    const r = JSON.parse(explore_joint_diag($("jd-sizes").value, $("jd-broken").value,
      Number($("jd-n").value), BigInt($("jd-seed").value)));
    const verdict = (ok) => ok ? `<span class="ok">yes</span>` : `<span class="bad">no</span>`;
    const rows = r.blocks.map((b) =>
      `<tr><td>${b.block}</td><td>${b.size}</td><td>${b.defect.toExponential(2)}</td><td>${verdict(b.diagonalizable)}</td></tr>`
    ).join("");
    $("jd-out").innerHTML =
      `<table><tr><th>block</th><th>size</th><th>defect</th><th>diagonalizable</th></tr>${rows}
       <tr><th colspan="2">assembled (${r.channels} ch)</th><td>${r.assembled_defect.toExponential(2)}</td>
       <td>${verdict(r.assembled_diagonalizable)}</td></tr></table>
       <p>tolerance ${r.tolerance}</p>`;
  });
}

await init();
$("simulate").onclick = simulateScene;
$("separate").onclick = separate;
$("spec-show").onclick = showSpectrogram;
$("spec-play").onclick = play;
$("jd-run").onclick = jointDiag;
$("jd-run").disabled = false;
status("ready: simulate a scene to begin");
