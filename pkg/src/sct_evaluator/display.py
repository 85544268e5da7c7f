from .report import METRIC_COLUMNS, MetricReport, format_value


def display_report(report: MetricReport):
    """
    Prints a terminal summary of an evaluation report.
    """
    prov = report.provenance
    print("\n=========================================")
    print(f"Evaluation Report ({prov.metric_scale} scale, seed {prov.seed})")
    print("=========================================")

    for row in report.rows:
        print(f"\n[-- {row.model_name} --]")
        print(f"Patients evaluated: {row.n_patients}")
        if row.excluded:
            print(f"Excluded: {len(row.excluded)}")
            for patient_id, reason in sorted(row.excluded.items()):
                print(f"- {patient_id}: {reason}")
        for key, label, higher in METRIC_COLUMNS:
            summary = row.summary(key)
            arrow = '↑' if higher else '↓'
            if summary.std is None:
                print(f"{label} {arrow}: {format_value(summary.mean)}")
            else:
                print(f"{label} {arrow}: {format_value(summary.mean)} ± {format_value(summary.std)}")
        if row.slice_means:
            pooled = ", ".join(f"{k}={format_value(v)}" for k, v in sorted(row.slice_means.items()))
            print(f"Per-slice pooled means: {pooled}")

    print(f"\nConfig hash: {prov.config_hash[:12]}  Dataset hash: {prov.dataset_hash[:12]}")
