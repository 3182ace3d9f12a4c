// Build first: see the crate README section on the browser demo.
import init, { lattice, geometry, attention } from "./pkg/wordlattice_wasm.js";

const RELATIONS = ["self", "left detached", "left overlapped", "contains",
  "contained by", "right overlapped", "right detached"];
const $ = (id) => document.getElementById(id);
const bias = RELATIONS.map(() => 0);
let decay = 0;

function label(t) {
  return `${t.surface} (${t.s},${t.e})`;
}

function errorOr(json, render) {
  const v = JSON.parse(json);
  if (v.error) return `<p class="error">${v.error}</p>`;
  return render(v);
}

function matrix(tokens, cell) {
  let html = "<table><tr><th></th>" + tokens.map((t) => `<th>${label(t)}</th>`).join("") + "</tr>";
  tokens.forEach((t, i) => {
    html += `<tr><th>${label(t)}</th>` + tokens.map((_, j) => cell(i, j)).join("") + "</tr>";
  });
  return html + "</table>";
}

function renderLattice(text, words) {
  $("lattice").innerHTML = errorOr(lattice(text, words), (v) =>
    `<p>${v.tokens.length} tokens: ${v.tokens.map(label).join(", ")}</p>` +
    v.segments.map((seg) => `<span class="seg">${seg.map((i) => v.tokens[i].surface).join(" · ")}</span>`).join(""));
}

function renderGeometry(text, words) {
  $("geometry").innerHTML = errorOr(geometry(text, words), (v) =>
    matrix(v.tokens, (i, j) =>
      `<td title="${v.offsets[i][j].join(", ")}">${RELATIONS[v.relations[i][j]]}</td>`));
}

function renderAttention(text, words) {
  $("attention").innerHTML = errorOr(attention(text, words, Float64Array.from(bias), decay), (v) =>
    matrix(v.tokens, (i, j) => {
      const w = v.weights[i][j];
      const shade = Math.round(255 * (1 - w));
      return `<td style="background: rgb(${shade},${shade},255)">${w.toFixed(2)}</td>`;
    }));
}

function render() {
  const text = $("text").value;
  const words = $("words").value;
  renderLattice(text, words);
  renderGeometry(text, words);
  renderAttention(text, words);
}

function slider(name, min, max, onInput) {
  const wrap = document.createElement("div");
  wrap.innerHTML = `<label>${name}</label><input type="range" min="${min}" max="${max}" step="0.1" value="0"> <span>0</span>`;
  const input = wrap.querySelector("input");
  input.addEventListener("input", () => {
    wrap.querySelector("span").textContent = input.value;
    onInput(Number(input.value));
    renderAttention($("text").value, $("words").value);
  });
  $("sliders").appendChild(wrap);
}

await init();
RELATIONS.forEach((r, k) => slider(`bias: ${r}`, -5, 5, (v) => { bias[k] = v; }));
slider("distance decay", 0, 3, (v) => { decay = v; });
$("text").addEventListener("input", render);
$("words").addEventListener("input", render);
render();
