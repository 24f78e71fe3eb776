#!/usr/bin/env python3
"""Builds the filter50 and official20 fixtures.

Each report is assembled from word lists of known length, so the expected
outcome and word counts come from construction, not from re-running a filter.
Findings need >= 10 words and impressions >= 2 words.
"""
import os
import random
import shutil

HERE = os.path.dirname(os.path.abspath(__file__))
VOCAB = (
    "lungs clear heart normal size mediastinal contours unremarkable no pleural "
    "effusion pneumothorax focal consolidation mild atelectasis bibasilar stable "
    "osseous structures intact degenerative changes spine trachea midline "
    "cardiomegaly vascular congestion opacity right left lower lobe"
).split()

rng = random.Random(20240611)


def words(n):
    return " ".join(rng.choice(VOCAB) for _ in range(n))


def write_cases(dirname, cases):
    root = os.path.join(HERE, dirname)
    reports = os.path.join(root, "reports")
    shutil.rmtree(reports, ignore_errors=True)
    os.makedirs(reports)
    rows = ["report_id\tstatus\tfindings_words\timpression_words"]
    for i, (text, status, fw, iw) in enumerate(cases, 1):
        rid = f"r{i:02d}"
        with open(os.path.join(reports, rid + ".txt"), "w", newline="") as f:
            f.write(text)
        rows.append(f"{rid}\t{status}\t{fw if fw is not None else '-'}\t{iw if iw is not None else '-'}")
    return root, rows


def std(fw, iw, fh="FINDINGS:", ih="IMPRESSION:", sep=" "):
    """Findings then impression; header and body on one line when sep is a space."""
    return f"{fh}{sep}{words(fw)}\n\n{ih}{sep}{words(iw)}\n"


def status(fw, iw):
    if fw is None or iw is None or fw == 0 or iw == 0:
        return "MissingSection"
    if fw < 10:
        return "FindingsTooShort"
    if iw < 2:
        return "ImpressionTooShort"
    return "eligible"


def case(text, fw, iw):
    return (text, status(fw, iw), fw if fw else None, iw if iw else None)


filter_cases = []
# Plain eligible reports with assorted lengths and header spellings.
for fw, iw, fh, ih in [
    (12, 3, "FINDINGS:", "IMPRESSION:"),
    (25, 6, "Findings:", "Impression:"),
    (40, 2, "findings:", "impression:"),
    (18, 9, "FINDING:", "IMPRESSIONS:"),
    (15, 4, "  FINDINGS:", "  IMPRESSION:"),
    (30, 12, "FINDINGS :", "IMPRESSION :"),
]:
    filter_cases.append(case(std(fw, iw, fh, ih), fw, iw))
# Body on the line after the header, with other sections around.
filter_cases.append(case(
    f"EXAMINATION: chest two views\nINDICATION: {words(5)}\nCOMPARISON: None.\n"
    f"FINDINGS:\n{words(7)}\n{words(8)}\n\nIMPRESSION:\n{words(4)}\n", 15, 4))
filter_cases.append(case(
    f"TECHNIQUE: {words(4)}\n\nFINDINGS: {words(11)}\n\nIMPRESSION: {words(3)}\n\nRECOMMENDATIONS: {words(6)}\n", 11, 3))
# Boundaries: findings 9/10 words, impression 1/2 words.
filter_cases.append(case(std(9, 5), 9, 5))
filter_cases.append(case(std(10, 5), 10, 5))
filter_cases.append(case(std(14, 1), 14, 1))
filter_cases.append(case(std(14, 2), 14, 2))
filter_cases.append(case(std(9, 1), 9, 1))
filter_cases.append(case(std(10, 2), 10, 2))
filter_cases.append(case(std(9, 2), 9, 2))
filter_cases.append(case(std(10, 1), 10, 1))
filter_cases.append(case(std(1, 8), 1, 8))
filter_cases.append(case(std(22, 1), 22, 1))
# Missing sections.
filter_cases.append(case(f"{words(20)}\n{words(5)}\n", None, None))
filter_cases.append(case(f"FINDINGS: {words(20)}\n", 20, None))
filter_cases.append(case(f"IMPRESSION: {words(6)}\n", None, 6))
filter_cases.append(case(f"FINDINGS: {words(16)}\n\nIMPRESSION:\n\n", 16, None))
filter_cases.append(case(f"FINDINGS:   \nIMPRESSION: {words(5)}\n", None, 5))
filter_cases.append(case(f"FINDINGS AND IMPRESSION: {words(20)}\n", None, None))
filter_cases.append(case(f"INDICATION: {words(8)}\nFINDINGS AND IMPRESSION:\n{words(15)}\n", None, None))
filter_cases.append(case(f"CLINICAL HISTORY: {words(6)}\nIMPRESSION: {words(4)}\n", None, 4))
filter_cases.append(case("", None, None))
filter_cases.append(case("   \n\n\t\n", None, None))
# Duplicate findings headers merge.
filter_cases.append(case(f"FINDINGS: {words(6)}\nIMPRESSION: {words(3)}\nFINDINGS: {words(5)}\n", 11, 3))
filter_cases.append(case(f"FINDINGS: {words(4)}\nFINDINGS: {words(5)}\nIMPRESSION: {words(3)}\n", 9, 3))
filter_cases.append(case(f"IMPRESSION: {words(1)}\nFINDINGS: {words(12)}\nIMPRESSION: {words(1)}\n", 12, 2))
# Lines that look like headers but are not: mixed case heads are body text.
filter_cases.append(case(f"FINDINGS: {words(5)}\nHeart size: normal.\n{words(2)}\nIMPRESSION: {words(3)}\n", 10, 3))
filter_cases.append(case(f"FINDINGS: {words(4)}\nHeart size: normal.\n{words(2)}\nIMPRESSION: {words(3)}\n", 9, 3))
filter_cases.append(case(f"FINDINGS: {words(12)}\nIMPRESSION: Pulmonary edema: mild.\n", 12, 3))
# CRLF line endings and stray whitespace.
filter_cases.append(case(std(13, 3).replace("\n", "\r\n"), 13, 3))
filter_cases.append(case(f"FINDINGS:\r\n{words(4)}\r\n{words(5)}\r\nIMPRESSION:\r\n{words(2)}\r\n", 9, 2))
filter_cases.append(case(f"FINDINGS:\t{words(6)}  \t {words(6)}\n\n\n\nIMPRESSION:   {words(1)}   {words(1)}\n", 12, 2))
# Impression before findings.
filter_cases.append(case(f"IMPRESSION: {words(5)}\n\nFINDINGS: {words(17)}\n", 17, 5))
filter_cases.append(case(f"IMPRESSION: {words(5)}\n\nFINDINGS: {words(8)}\n", 8, 5))
filter_cases.append(case(f"Findings: {words(10)}\nimpressions: {words(2)}\n", 10, 2))
# More plain eligible and ineligible reports to reach 50.
for fw, iw in [(10, 10), (11, 2), (50, 3), (3, 3), (2, 1), (19, 1), (33, 7), (9, 9), (60, 15), (16, 2)]:
    filter_cases.append(case(std(fw, iw), fw, iw))

assert len(filter_cases) == 50, len(filter_cases)
root, rows = write_cases("filter50", filter_cases)
with open(os.path.join(root, "expected.tsv"), "w") as f:
    f.write("\n".join(rows) + "\n")

# Official split: 23 eligible reports, 20 of them listed 16/2/2, plus one listed id with no report.
official_cases = [case(std(12 + i % 5, 3), 12 + i % 5, 3) for i in range(23)]
root, _ = write_cases("official20", official_cases)
names = ["train"] * 16 + ["validate", "test"] + ["test"] + ["val"]
ids = [f"r{i:02d}" for i in range(1, 21)]
rng.shuffle(ids)
lines = ["# report_id<TAB>split", ""]
lines += [f"{rid}\t{name}" for rid, name in zip(ids, names)]
lines.append("r99\ttrain")
with open(os.path.join(root, "split.tsv"), "w") as f:
    f.write("\n".join(lines) + "\n")
canon = {"validate": "val"}
with open(os.path.join(root, "expected.tsv"), "w") as f:
    f.write("report_id\tsplit\n")
    for rid, name in sorted(zip(ids, names)):
        f.write(f"{rid}\t{canon.get(name, name)}\n")
