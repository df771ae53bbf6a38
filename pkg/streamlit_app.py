"""
QNN Bit-Flip Verifier - Streamlit dashboard
Load a quantized model and a property, run a verification and inspect the report.
"""

import json
import traceback
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import streamlit as st

from absdomain import InputRegion
from config import load_settings
from errors import VerifierError
from model_parser import ModelParser
from reports import calls_figure, layer_summary, verdicts_frame
from verifier import Mode, OverallStatus, ParameterScope, VerificationJob, VerificationReport, verify, vulnerable_parameters

NETWORK_DIR = Path(__file__).parent / "networks"

st.set_page_config(
    page_title="🛡️ QNN Bit-Flip Verifier",
    page_icon="🛡️",
    layout="wide",
    initial_sidebar_state="expanded"
)

st.markdown("""
<style>
    .glass-card {
        background: rgba(255, 255, 255, 0.05);
        border: 1px solid rgba(255, 255, 255, 0.1);
        border-radius: 16px;
        padding: 1.5rem;
    }
</style>
""", unsafe_allow_html=True)

STATUS_EMOJI = {
    OverallStatus.BFA_TOLERANT: "✅",
    OverallStatus.FALSIFIED: "💥",
    OverallStatus.UNKNOWN: "❓",
    OverallStatus.TIMEOUT: "⏱️",
}


def bundled_models() -> Dict[str, Path]:
    """Model files shipped in networks/ (property files excluded)."""
    if not NETWORK_DIR.exists():
        return {}
    return {p.name: p for p in sorted(NETWORK_DIR.glob("*.json")) if "center" not in p.stem and "box" not in p.stem}


def parse_vector(text: str) -> np.ndarray:
    values = json.loads(text)
    if isinstance(values, dict):
        values = values.get("center", values.get("lower"))
    return np.asarray(values, dtype=float)


def run_verification(model_text: str, name: str, form: Dict[str, Any]) -> Dict[str, Any]:
    """Run a job; errors are returned for display instead of raised."""
    try:
        net = ModelParser().parse_text(model_text, default_name=name)
        if form["region_kind"] == "L-infinity ball":
            region = InputRegion.linf_ball(parse_vector(form["center"]), form["radius"])
        else:
            region = InputRegion.box(parse_vector(form["lower"]), parse_vector(form["upper"]))
        settings = load_settings(
            workers=form["workers"],
            timeout_ra=form["timeout_ra"] or None,
            timeout_milp=form["timeout_milp"] or None,
            binary_search=form["binary_search"],
        )
        job = VerificationJob(
            net, region, form["target"], form["bits"], Mode(form["mode"]),
            ParameterScope.parse(form["scope"], settings), settings, name,
        )
        return {"success": True, "report": verify(job)}
    except (VerifierError, ValueError) as e:
        return {"success": False, "error": str(e), "traceback": traceback.format_exc()}


def display_overview(report: VerificationReport):
    col1, col2, col3, col4 = st.columns(4)
    safe = sum(1 for v in report.verdicts if v.is_safe)

    with col1:
        st.metric("Overall", f"{STATUS_EMOJI[report.overall]} {report.overall.value}", delta=report.mode.value)
    with col2:
        st.metric("Safe parameters", f"{safe}/{len(report.verdicts)}")
    with col3:
        st.metric("Vulnerable set", len(report.vulnerable))
    with col4:
        st.metric("Analyzer calls", report.ra_calls, delta=f"{report.timings.get('total', 0.0):.2f}s")


def display_witness(report: VerificationReport):
    if report.witness is None:
        st.info("No witness: the report is not Falsified.")
        return
    w = report.witness
    for param, bits in w.attack.pairs:
        st.markdown(f"**Flip bits {sorted(bits)} of `{param}`**")
    st.json(w.to_dict())


def main():
    st.markdown("<h1>🛡️ QNN Bit-Flip Verifier</h1>", unsafe_allow_html=True)
    st.markdown("Prove that a quantized network keeps its decision under bit-flip attacks on its parameters.")

    with st.sidebar:
        st.markdown("### 📦 Model")
        uploaded = st.file_uploader("Model JSON", type=["json"])
        models = bundled_models()
        chosen: Optional[str] = None
        if uploaded is None and models:
            chosen = st.selectbox("Bundled model", options=list(models))

        st.markdown("---")
        st.markdown("### 🎯 Property")
        region_kind = st.radio("Region", ["L-infinity ball", "Box"])
        form: Dict[str, Any] = {"region_kind": region_kind}
        if region_kind == "L-infinity ball":
            form["center"] = st.text_input("Center", value="[1, 1]")
            form["radius"] = st.number_input("Radius", min_value=0.0, value=0.0, step=0.01)
        else:
            form["lower"] = st.text_input("Lower", value="[0, 0]")
            form["upper"] = st.text_input("Upper", value="[1, 1]")
        form["target"] = st.number_input("Target class", min_value=1, value=1, step=1)

        st.markdown("---")
        st.markdown("### ⚙️ Attack & analysis")
        form["bits"] = st.number_input("Bit flips per parameter", min_value=1, value=1, step=1)
        form["mode"] = st.selectbox("Mode", [m.value for m in Mode], index=1)
        form["scope"] = st.text_input("Scope", value="all", help="all | sample | layers=3 | params=W3_2_2 | exclude=W3_2_2")
        form["binary_search"] = st.checkbox("Binary search", value=True)
        form["workers"] = st.number_input("Workers", min_value=1, value=1, step=1)
        form["timeout_ra"] = st.number_input("Sweep timeout (s, 0 = none)", min_value=0.0, value=0.0)
        form["timeout_milp"] = st.number_input("MILP timeout (s, 0 = none)", min_value=0.0, value=0.0)

        run_button = st.button("🔍 Verify", use_container_width=True)

    if not run_button:
        st.markdown("""
        <div class='glass-card'>
            <h3>How it works</h3>
            <p>Every parameter's reachable flipped values are split by sign and proved with a symbolic
            abstract domain; parameters that cannot be proved are escalated to an exact search that
            either proves them or returns a concrete attack.</p>
        </div>
        """, unsafe_allow_html=True)
        return

    if uploaded is not None:
        model_text, name = uploaded.getvalue().decode("utf-8"), Path(uploaded.name).stem
    elif chosen is not None:
        model_text, name = models[chosen].read_text(encoding="utf-8"), Path(chosen).stem
    else:
        st.error("Upload a model or add one to networks/.")
        return

    with st.status("Verifying...", expanded=False) as status:
        results = run_verification(model_text, name, form)
        if not results["success"]:
            status.update(label="❌ Verification failed", state="error", expanded=True)
            st.error(f"Error: {results['error']}")
            with st.expander("🐛 Debug Info"):
                st.code(results["traceback"])
            return
        status.update(label="✅ Verification complete!", state="complete", expanded=False)

    report = results["report"]
    st.markdown("## 📊 Overview")
    display_overview(report)
    for note in report.notes:
        st.info(note)

    st.markdown("---")
    tab1, tab2, tab3, tab4 = st.tabs(["📋 Parameters", "📈 Calls", "⚠️ Vulnerable", "💥 Witness"])

    with tab1:
        frame = verdicts_frame(report)
        st.dataframe(frame, use_container_width=True, height=500)
        st.download_button(
            label="📥 Download Verdicts (CSV)",
            data=frame.to_csv(index=False),
            file_name="verdicts.csv",
            mime="text/csv"
        )
        st.download_button(
            label="📥 Download Report (JSON)",
            data=json.dumps(report.to_dict(), indent=2),
            file_name="report.json",
            mime="application/json"
        )

    with tab2:
        st.plotly_chart(calls_figure(report), use_container_width=True)
        st.dataframe(layer_summary(report), use_container_width=True)

    with tab3:
        listing = vulnerable_parameters(report)
        if listing:
            st.dataframe(listing, use_container_width=True)
        else:
            st.success("Every analysed parameter was proved safe.")

    with tab4:
        display_witness(report)


if __name__ == "__main__":
    main()
