import pandas as pd
import pytest

from fewsar_benchmark import BenchmarkResult
from utils.errors import LayoutError
from utils.report_writer import (
    BASE_COLUMNS,
    BenchmarkReporter,
    read_results_csv,
    report,
    write_results_csv,
)
from utils.result_formatters import format_setting_label, parse_setting_label

CATEGORY = {'Baseline': 'fine-tuning', 'Baseline++': 'fine-tuning', 'MAML': 'meta', 'R2D2': 'meta',
            'ANIL': 'meta', 'ProtoNet': 'metric', 'DN4': 'metric', 'ATL_Net': 'metric', 'CovaMNet': 'metric'}


def _result(method, k_shot=1, accuracy=50.0, runtime=0.5, n_way=5, ci=0.4):
    return BenchmarkResult(method=method, category=CATEGORY.get(method, 'metric'), n_way=n_way, k_shot=k_shot,
                           accuracy=accuracy, ci=ci, runtime_minutes=runtime, seed=0,
                           config_digest='0123abcd', n_episodes=600)


def _best(table, model, label, source='run'):
    row = table[(table['model'] == model) & (table['source'] == source)].iloc[0]
    return bool(row[f"{label} best"])


def test_empty_results_give_header_only(tmp_path):
    path = report([], 'csv', str(tmp_path / 'empty.csv'))
    frame = pd.read_csv(path)
    assert len(frame) == 0
    assert list(frame.columns)[:len(BASE_COLUMNS)] == BASE_COLUMNS
    assert '5-way 1-shot' in frame.columns and '5-way 5-shot best' in frame.columns


def test_one_best_per_category_and_setting():
    results = [
        _result('Baseline', 1, 54.0), _result('Baseline++', 1, 60.0),
        _result('MAML', 1, 20.0), _result('R2D2', 1, 64.0), _result('ANIL', 1, 21.0),
        _result('ProtoNet', 1, 40.0), _result('DN4', 1, 67.0), _result('ATL_Net', 1, 72.0),
    ]
    table = BenchmarkReporter().build_table(results)
    label = '5-way 1-shot'
    flagged = table[table[f"{label} best"]]
    assert sorted(flagged['model']) == ['ATL_Net', 'Baseline++', 'R2D2']
    assert flagged.groupby('category').size().eq(1).all()


def test_ties_go_to_the_first_row():
    results = [_result('DN4', 1, 70.0), _result('ProtoNet', 1, 70.0)]
    table = BenchmarkReporter().build_table(results)
    # rows follow registry order: ProtoNet before DN4
    assert list(table['model']) == ['ProtoNet', 'DN4']
    assert _best(table, 'ProtoNet', '5-way 1-shot')
    assert not _best(table, 'DN4', '5-way 1-shot')


def test_runtime_table_flags_fastest():
    results = [_result('ProtoNet', 1, runtime=0.9), _result('DN4', 1, runtime=0.3)]
    reporter = BenchmarkReporter(metric='runtime', hardware={'processor': 'x86_64', 'device': 'cpu'})
    table = reporter.build_table(results)
    label = format_setting_label(5, 1, runtime=True)
    assert _best(table, 'DN4', label)
    assert not _best(table, 'ProtoNet', label)
    text = reporter.render_markdown(table)
    assert 'Hardware: processor=x86_64, device=cpu' in text
    assert '**0.30**' in text


def test_results_csv_roundtrip(tmp_path):
    methods = ['Baseline', 'Baseline++', 'MAML', 'R2D2', 'ANIL', 'ProtoNet', 'DN4', 'ATL_Net', 'CovaMNet']
    results = [_result(m, k, accuracy=10.0 + i * 5 + k, runtime=0.25 * (i + 1))
               for i, m in enumerate(methods) for k in (1, 5)][:15]
    results[0].config_digest = '00e5'
    results[1].hardware = 'processor=x86_64, device=cpu'
    path = write_results_csv(results, str(tmp_path / 'results.csv'))
    assert read_results_csv(path) == results


def test_mixed_ways_rejected():
    with pytest.raises(LayoutError):
        BenchmarkReporter().build_table([_result('DN4', 1, n_way=5), _result('DN4', 1, n_way=3)])


def test_duplicate_setting_rejected():
    with pytest.raises(LayoutError):
        BenchmarkReporter().build_table([_result('DN4', 1), _result('DN4', 1, accuracy=60.0)])


def test_reference_rows_need_five_way():
    with pytest.raises(LayoutError):
        BenchmarkReporter(include_reference=True).build_table([_result('DN4', 1, n_way=3)])


def test_reference_rows_and_caution_marks():
    reporter = BenchmarkReporter(include_reference=True)
    table = reporter.build_table([_result('ProtoNet', 1, 45.0), _result('ProtoNet', 5, 60.0)])
    references = table[table['source'] == 'reference']
    assert 'Versa' in set(references['model'])
    assert 'RFS_Model' not in set(references['model'])
    assert _best(table, 'ATL_Net', '5-way 5-shot', source='reference')
    assert _best(table, 'ProtoNet', '5-way 5-shot', source='run')

    text = reporter.render_markdown(table)
    assert '| ProtoNet † |' in text
    assert '**45.00 ± 0.40%**' in text
    assert '**88.81%**' in text
    assert 'reproduce with caution' in text


def test_markdown_report_writes_csv_sibling(tmp_path):
    out = tmp_path / 'tables' / 'accuracy.md'
    report([_result('DN4', 1, 66.0)], 'md', str(out))
    assert out.read_text().startswith('**Classification accuracy**')
    assert (tmp_path / 'tables' / 'accuracy.csv').exists()
    with pytest.raises(LayoutError):
        report([], 'html', str(tmp_path / 'x.html'))


@pytest.mark.parametrize('label, expected', [
    ('5-way 1-shot', (5, 1)),
    ('5-way 5-shot (min)', (5, 5)),
    (' 10-way 20-shot ', (10, 20)),
])
def test_setting_labels_parse(label, expected):
    assert parse_setting_label(label) == expected


def test_setting_label_rejects_other_columns():
    with pytest.raises(LayoutError):
        parse_setting_label('Venue')


def test_runtime_caption_falls_back_to_result_hardware():
    result = _result('DN4', 1, runtime=0.3)
    result.hardware = 'processor=arm64, device=cpu'
    reporter = BenchmarkReporter(metric='runtime')
    text = reporter.render_markdown(reporter.build_table([result]))
    assert 'Hardware: processor=arm64, device=cpu' in text
