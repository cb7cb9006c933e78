from __future__ import annotations

import shlex
import sys
from typing import Any

from prettytable import PrettyTable

from speechaudit_hub.analysis.config import AuditConfig
from speechaudit_hub.core.exceptions import AuditInputError, ConfigError, NumericalError
from speechaudit_hub.core.usecases import cmd_gen_synthetic, cmd_gen_wada_table, run_command
from speechaudit_hub.logging_config import setup_logging

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2

PIPELINE_COMMANDS = ("score", "features", "fit", "sdi", "cartography", "pca", "report")

# флаги запуска, не входящие в AuditConfig
_RUN_FLAGS = {"config"}


def _parse_flags(tokens: list[str]) -> dict[str, str]:
    """
    Простой парсер флагов формата:
    --manifest data/manifest.jsonl --output-dir runs/demo
    """
    args: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t.startswith("--"):
            key = t[2:]
            if i + 1 >= len(tokens) or tokens[i + 1].startswith("--"):
                raise ConfigError(f"Для аргумента --{key} требуется значение")
            args[key] = tokens[i + 1]
            i += 2
        else:
            raise ConfigError(f"Неожиданный аргумент '{t}'")
    return args


def print_help() -> None:
    print(
        """
Доступные команды:

Конвейер аудита (флаги повторяют ключи файла конфигурации):
  score        --manifest <path> --embeddings <path> [--sentence-vectors <path>]
      Шесть метрик (WER, CER, MER, WIL, EmbER, SemDist) для каждой пары высказывание/модель.

  features     --manifest <path> [--snr-source manifest|wada|manifest_then_wada] [--age-bins <path>]
      Стандартизованные признаки (SNR, длительность, возраст) и профиль наборов данных.

  fit
      Регрессия MEAF по каждой метрике с кластерными по спикеру ошибками.

  sdi          [--decile-scope pooled|per-dataset]
      Индекс трудности высказывания (SDI) и децили.

  cartography  [--permutations <int>] [--seed <int>] [--stratify-metric <metric>]
      Картография mu/sigma по ансамблю моделей, квадранты и SVG-графики.

  pca
      PCA шести метрик, нагрузки и объяснённая дисперсия.

  report       [--build-missing true] [--report-percent true]
      Markdown-отчёт по всем артефактам запуска.

  Общие флаги: --output-dir <dir> --config <file> --ember-threshold <float> --ember-sub-weight <float>

Служебные команды:
  gen-synthetic  --output-dir <dir> [--utterances <int>] [--models <int>] [--datasets <int>] [--seed <int>]
      Синтетический корпус с заложенными коэффициентами.

  gen-wada-table [--path <csv>]
      Пересчитать таблицу WADA-SNR (по умолчанию в OUTPUT_ROOT/wada_table.csv).

  help
      Показать это сообщение.

  exit
      Выход из интерактивного режима.
"""
    )


def _config(args: dict[str, str]) -> AuditConfig:
    flags = {k: v for k, v in args.items() if k not in _RUN_FLAGS}
    return AuditConfig.from_sources(flags, config_file=args.get("config"))


def _table(headers: list[str], rows: list[list[Any]]) -> PrettyTable:
    table = PrettyTable()
    table.field_names = headers
    for row in rows:
        table.add_row(row)
    return table


def _print_result(cmd: str, res: dict[str, Any]) -> None:
    if cmd == "score" and res.get("means"):
        print(f"Оценено пар: {res['rows']} (высказываний: {res['samples']}, модели: {', '.join(res['models'])})")
        print(_table(["Метрика", "Среднее"], [[m, f"{v:.4f}"] for m, v in res["means"].items()]))
        if res["empty_ref"] or res["oov_sentence"]:
            print(f"Флаги: empty_ref={res['empty_ref']}, oov_sentence={res['oov_sentence']}")
    elif cmd == "fit":
        rows = [
            [s["metric"], f"{s['r2']:.4f}", f"{s['f']:.2f}", s["n"], s["k"], s["clusters"]]
            for s in res["summary"]
        ]
        print(_table(["Метрика", "R²", "F", "n", "k", "Кластеры"], rows))
    elif cmd == "cartography":
        rows = [[c["metric"], f"{c['rho']:.3f}", f"{c['p']:.4f}"] for c in res["correlations"]]
        print(_table(["Метрика", "Spearman(SDI, mu)", "p"], rows))
    elif cmd == "pca":
        ratios = res["explained_variance_ratio"]
        print(_table(["Компонента", "Доля дисперсии"], [[f"PC{i + 1}", f"{r:.3f}"] for i, r in enumerate(ratios)]))
    elif cmd == "sdi" and res.get("degenerate"):
        print(f"Внимание: децили с равными значениями SDI для {', '.join(res['degenerate'])}")
    elif cmd == "report" and res.get("built"):
        print(f"Дособраны этапы: {', '.join(res['built'])}")

    if "artifacts" in res:
        print(f"Готово: {', '.join(res['artifacts'])} -> {res['output_dir']}")
    elif "path" in res:
        print(f"Готово: {res['path']} ({res['rows']} строк)")
    elif "directory" in res:
        print(f"Корпус записан в {res['directory']}: {res['samples']} высказываний, {res['audio_files']} WAV")


def execute(cmd: str, args: dict[str, str]) -> dict[str, Any]:
    if cmd in PIPELINE_COMMANDS:
        return run_command(cmd, _config(args))
    if cmd == "gen-synthetic":
        if "output-dir" not in args:
            raise ConfigError("Для gen-synthetic требуется --output-dir")
        try:
            return cmd_gen_synthetic(
                args["output-dir"],
                n_utterances=int(args.get("utterances", 40)),
                n_models=int(args.get("models", 4)),
                n_datasets=int(args.get("datasets", 2)),
                seed=int(args.get("seed", 0)),
                wav_share=float(args.get("wav-share", 0.25)),
            )
        except ValueError as e:
            raise ConfigError(f"Некорректное числовое значение флага: {e}") from e
    if cmd == "gen-wada-table":
        return cmd_gen_wada_table(args.get("path"))
    raise ConfigError(f"Неизвестная команда '{cmd}'. Введите help.")


def run_line(tokens: list[str]) -> int:
    """Одна команда: печатает результат или ошибку и возвращает код выхода."""
    cmd = tokens[0]
    if cmd == "help":
        print_help()
        return EXIT_OK
    try:
        res = execute(cmd, _parse_flags(tokens[1:]))
    except AuditInputError as e:
        print(f"Ошибка входных данных: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"Численная ошибка: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print_result(cmd, res)
    return EXIT_OK


def repl() -> int:
    print("Аудит ASR: интерактивный режим.")
    print("Введите help для списка команд.\n")
    code = EXIT_OK
    while True:
        try:
            line = input("audit> ").strip()
        except (KeyboardInterrupt, EOFError):
            print("\nВыход.")
            return code
        if not line:
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as e:
            # незакрытые кавычки
            print(f"Не удалось разобрать команду: {e}")
            continue
        if tokens[0] in {"exit", "quit"}:
            print("Выход.")
            return code
        try:
            code = run_line(tokens)
        except KeyboardInterrupt:
            print("\nПрервано.")
        except Exception as e:
            print(f"Непредвиденная ошибка: {e}")


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    tokens = sys.argv[1:] if argv is None else list(argv)
    if not tokens:
        return repl()
    return run_line(tokens)
