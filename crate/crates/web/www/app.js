import init, { generate, explain_split, run_modes } from "./pkg/aqplab_web.js";

const $ = (id) => document.getElementById(id);
let queries = [];

function status(msg, bad) {
  $("status").textContent = msg;
  $("status").className = bad ? "bad" : "";
}

function guarded(fn) {
  return () => {
    try {
      status("");
      fn();
    } catch (e) {
      status(String(e), true);
    }
  };
}

$("gen").onclick = guarded(() => {
  const g = JSON.parse(generate($("preset").value, Number($("seed").value) >>> 0));
  queries = g.queries;
  $("tables").textContent = g.tables.map((t) => `${t.name} ${t.rows}`).join(", ");
  $("queries").innerHTML = "";
  for (const q of queries) {
    const o = document.createElement("option");
    o.textContent = q.name;
    $("queries").append(o);
  }
  $("sql").value = queries.length ? queries[0].sql : "";
});

$("queries").onchange = () => {
  const q = queries.find((q) => q.name === $("queries").value);
  if (q) $("sql").value = q.sql;
};

$("explain").onclick = guarded(() => {
  $("explain-out").textContent = explain_split($("sql").value, $("strategy").value, $("monitor").checked);
});

$("compare").onclick = guarded(() => {
  const rows = JSON.parse(run_modes($("sql").value));
  const t = $("modes");
  t.innerHTML = "<tr><th>mode</th><th>intermediates</th><th>sub-plans</th><th>rows</th><th>golden</th><th>join order</th></tr>";
  for (const r of rows) {
    const tr = document.createElement("tr");
    const cells = [
      [r.mode, ""],
      [r.intermediate_tuples, "num"],
      [r.subplans, "num"],
      [r.rows, "num"],
      [r.matches_vanilla ? "ok" : "MISMATCH", r.matches_vanilla ? "" : "bad"],
      [r.order, ""],
    ];
    for (const [v, cls] of cells) {
      const td = document.createElement("td");
      td.textContent = v;
      td.className = cls;
      tr.append(td);
    }
    t.append(tr);
  }
});

await init();
status("ready");
