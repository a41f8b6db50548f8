# app.py

"""
Streamlit viewer for LANE run artifacts: metrics, sweep plots and explanations.
It only reads what the CLI wrote; nothing here trains or calls an LLM.
"""

# 🧠 STREAMLIT ARTIFACT VIEWER

import json
import os
import sys
from pathlib import Path

import pandas as pd
import streamlit as st
from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent))

from explainer import ExplanationStore  # noqa: E402
from paths import EXPLANATIONS_SUBDIR, LOGS_DIR, METRICS_SUBDIR, ROOT_DIR, SWEEP_SUBDIR  # noqa: E402

# 🌍 Load .env configuration
load_dotenv()

default_output = os.getenv("LANE_OUTPUT_DIR", "outputs/run")

# 📱 Streamlit UI Setup
st.set_page_config(page_title="LANE Run Viewer", layout="wide")
st.title("📊 LANE Run Viewer")
st.markdown("""
Browse the artifacts of a pipeline run:

- Ranking metrics (HR@k, NDCG@k)
- Hyperparameter sweeps
- Four-step explanations with preference weights

---
""")

# 📂 Sidebar Info
with st.sidebar:
    st.markdown("## 🤖 About this Viewer")
    st.markdown("""
Artifacts are produced by the CLI:

```
python src/lane.py evaluate --config configs/default.toml
```

---
### 📁 Output Locations
- 📈 Metrics → `<output_dir>/metrics/`
- 🔁 Sweeps → `<output_dir>/sweep/`
- 💬 Explanations → `<output_dir>/explanations/`
- 📝 Logs → `logs/`
---
""")
    output_text = st.text_input("Run output directory", value=default_output)

    latest_log = sorted(LOGS_DIR.glob("*.log"), reverse=True)
    if latest_log:
        with open(latest_log[0], "rb") as f:
            st.download_button("⬇️ Download Latest Log", f, file_name=latest_log[0].name)
    else:
        st.info("⚠️ No logs found yet.")

output_dir = Path(output_text)
if not output_dir.is_absolute():
    output_dir = ROOT_DIR / output_dir

# 📈 Metrics
st.subheader("📈 Metrics")
metrics_path = output_dir / METRICS_SUBDIR / "metrics.json"
if metrics_path.exists():
    with open(metrics_path, "r", encoding="utf-8") as f:
        report = json.load(f)
    table = pd.DataFrame({split: data["metrics"] for split, data in report.items()})
    st.dataframe(table)
    st.caption(", ".join(f"{split}: {data['user_count']} users" for split, data in report.items()))
else:
    st.info("⚠️ No metrics yet. Run `lane evaluate` first.")

# 🔁 Sweeps
st.subheader("🔁 Sweeps")
sweep_dirs = sorted(p for p in (output_dir / SWEEP_SUBDIR).glob("*") if p.is_dir()) if (output_dir / SWEEP_SUBDIR).exists() else []
if sweep_dirs:
    chosen = st.selectbox("Swept parameter", [p.name for p in sweep_dirs])
    sweep_dir = output_dir / SWEEP_SUBDIR / chosen
    if (sweep_dir / "metrics.csv").exists():
        st.dataframe(pd.read_csv(sweep_dir / "metrics.csv"))
    for plot in sorted(sweep_dir.glob("*.png")):
        st.image(str(plot), caption=plot.stem)
else:
    st.info("⚠️ No sweeps yet. Run `lane sweep` first.")

# 💬 Explanations
st.subheader("💬 Explanations")
records = ExplanationStore(output_dir / EXPLANATIONS_SUBDIR / "explanations.jsonl").records()
if records:
    by_user = {r.user_id: r for r in records}
    user = st.selectbox("User", list(by_user))
    record = by_user[user]
    st.markdown(f"**Target item**: {record.target}  \n**Rank in candidate**: {record.rank or 'n/a'}")

    if not record.available:
        st.warning(f"Explanation unavailable: {record.error}")
    else:
        weights = pd.DataFrame(
            {"weight": list(record.omega)},
            index=[a.preference for a in record.step1] or [f"preference {i + 1}" for i in range(len(record.omega))],
        )
        st.bar_chart(weights)

        with st.expander("Step 1: preferences", expanded=True):
            for analysis in record.step1:
                st.markdown(f"**{analysis.preference}**: {analysis.analysis}")
        with st.expander("Step 2: target item and preference fitness"):
            st.markdown(record.introduction)
            for fitness in record.step2:
                st.markdown(f"- **{fitness.preference}**: {fitness.fitness:g} ({fitness.reason})")
        with st.expander("Step 3: interaction probability"):
            st.markdown(f"**{record.probability}**: {record.probability_reason}")
        with st.expander("Step 4: recommendation"):
            st.markdown(record.recommendation)
else:
    st.info("⚠️ No explanations yet. Run `lane explain` first.")
