#!/usr/bin/env python3
"""Deterministic generator for the bundled miniature bilingual corpus.

Writes data/ru_mini.txt, data/en_mini.txt, data/instructions.jsonl, and
data/mcq.jsonl. Everything is synthetic, produced from fixed word banks and a
fixed seed, so re-running the script reproduces the committed files
byte-for-byte.
"""

import json
import random
from pathlib import Path

SEED = 20260823
ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"

SAMPLE_SENTENCE = "Машинное обучение изменяет мир"

RU_SUBJECTS = [
    "Машинное обучение", "Нейронная сеть", "Языковая модель", "Токенизатор",
    "Алгоритм", "Исследователь", "Компьютер", "Словарь модели", "Корпус текстов",
    "Метод адаптации", "Оптимизатор", "Градиент", "Эксперимент", "Переводчик",
    "Студент", "Преподаватель", "Программа", "Библиотека", "Архитектура",
    "Обучение модели",
]
RU_VERBS = [
    "изменяет", "улучшает", "описывает", "изучает", "обрабатывает",
    "предсказывает", "сравнивает", "сокращает", "расширяет", "объясняет",
    "проверяет", "вычисляет", "показывает", "создает", "поддерживает",
]
RU_OBJECTS = [
    "мир", "качество текста", "новые данные", "русский язык", "словарный запас",
    "результаты оценки", "скорость обучения", "структуру предложения",
    "процесс адаптации", "работу системы", "точность ответов", "набор примеров",
    "длину последовательности", "значение функции потерь", "поведение модели",
]
RU_TAILS = [
    "быстрее чем раньше", "на каждом шаге обучения", "без потери качества",
    "для новых языков", "при малом объеме данных", "в ходе эксперимента",
    "согласно плану исследования", "на отложенной выборке",
    "с учетом регуляризации", "после замены словаря", "",
]

EN_SUBJECTS = [
    "The language model", "A tokenizer", "The training loop", "Our method",
    "The optimizer", "A researcher", "The evaluation suite", "The corpus",
    "The embedding table", "A small transformer", "The gradient check",
    "The vocabulary", "An experiment", "The baseline", "The pipeline",
]
EN_VERBS = [
    "improves", "measures", "compresses", "predicts", "describes", "adapts",
    "reduces", "extends", "validates", "computes", "produces", "compares",
]
EN_OBJECTS = [
    "the perplexity", "the token stream", "the held-out set", "new languages",
    "the learning rate", "the attention weights", "subword pieces",
    "the loss value", "long documents", "the answer options", "the seed corpus",
    "training efficiency",
]
EN_TAILS = [
    "at every step", "without extra data", "on the benchmark",
    "after vocabulary replacement", "in a single pass", "with a fixed seed",
    "under a tight budget", "",
]


def ru_sentence(rng):
    s = f"{rng.choice(RU_SUBJECTS)} {rng.choice(RU_VERBS)} {rng.choice(RU_OBJECTS)}"
    tail = rng.choice(RU_TAILS)
    if tail:
        s += " " + tail
    return s + "."


def en_sentence(rng):
    s = f"{rng.choice(EN_SUBJECTS)} {rng.choice(EN_VERBS)} {rng.choice(EN_OBJECTS)}"
    tail = rng.choice(EN_TAILS)
    if tail:
        s += " " + tail
    return s + "."


def paragraph(rng, sentence_fn, n_lo=3, n_hi=6):
    return " ".join(sentence_fn(rng) for _ in range(rng.randint(n_lo, n_hi)))


def write_ru(rng):
    paragraphs = []
    target_bytes = 1_200_000
    total = 0
    i = 0
    while total < target_bytes:
        p = paragraph(rng, ru_sentence)
        # keep the headline sentence and its words common in the corpus
        if i % 7 == 0:
            p = SAMPLE_SENTENCE + ". " + p
        paragraphs.append(p)
        # occasional near-duplicate with a tiny edit, for dedup to find
        if i % 23 == 22:
            words = p.split()
            words[rng.randrange(len(words))] = "также"
            paragraphs.append(" ".join(words))
        total += len(p.encode("utf-8")) + 2
        i += 1
    # a handful of exact duplicates
    for j in range(0, len(paragraphs), 97):
        paragraphs.append(paragraphs[j])
    (DATA / "ru_mini.txt").write_text("\n\n".join(paragraphs) + "\n", encoding="utf-8")


def write_en(rng):
    paragraphs = []
    total = 0
    while total < 150_000:
        p = paragraph(rng, en_sentence)
        paragraphs.append(p)
        total += len(p.encode("utf-8")) + 2
    (DATA / "en_mini.txt").write_text("\n\n".join(paragraphs) + "\n", encoding="utf-8")


RU_PROMPTS = [
    ("Что делает токенизатор?", "Токенизатор разбивает текст на части, которые модель обрабатывает. Хороший словарь сокращает длину последовательности и ускоряет обучение."),
    ("Объясни, зачем нужна регуляризация при дообучении.", "Регуляризация удерживает модель рядом с исходной версией, поэтому она осваивает новый язык и при этом сохраняет прежние знания."),
    ("Как оценивают языковую модель?", "Модель оценивают перплексией на отложенной выборке и точностью на вопросах с вариантами ответов. Чем ниже перплексия, тем лучше модель предсказывает текст."),
    ("Почему замена словаря помогает новому языку?", "Новый словарь содержит целые слова нужного языка, поэтому каждое предложение кодируется меньшим числом токенов и модель учится быстрее."),
    ("Что такое перплексия?", "Перплексия показывает, насколько модель удивлена текстом. Она равна экспоненте средней ошибки предсказания следующего токена."),
    ("Расскажи про очистку корпуса.", "Сначала удаляют почти одинаковые абзацы, затем отбрасывают тексты низкого качества. Чистые данные дают заметно лучший результат при том же объеме обучения."),
    ("Зачем нужен держатель начального состояния при обучении?", "Начальная модель служит ориентиром: расхождение с ней штрафуется, и обучение не разрушает уже выученные способности."),
    ("Как работает перенос эмбеддингов?", "Совпадающие части словаря копируются без изменений, а новые слова получают среднее представлений своих частей в старом словаре."),
]
EN_PROMPTS = [
    ("What does a tokenizer do?", "A tokenizer splits text into pieces the model can process. A compact vocabulary keeps sequences short and training fast."),
    ("Why filter the training corpus?", "Filtering removes noisy and duplicated text, so every training step is spent on useful examples and the final model scores better."),
    ("Explain perplexity in one paragraph.", "Perplexity measures how surprised a model is by held-out text. It is the exponential of the average next-token loss, so lower values mean better predictions."),
    ("How are embeddings transplanted to a new vocabulary?", "Pieces shared with the old vocabulary keep their vectors, and each new piece starts from the mean of the old vectors for its decomposition."),
    ("Why keep a frozen reference model during adaptation?", "The frozen copy anchors training: a penalty on drifting away from it preserves the original capabilities while the model learns the new language."),
    ("What is instruction tuning?", "Instruction tuning trains the model on prompt and response pairs, teaching it to answer requests instead of merely continuing text."),
]


def write_instructions(rng):
    rows = []
    for lang, bank in (("ru", RU_PROMPTS), ("en", EN_PROMPTS)):
        for prompt, output in bank:
            rows.append({"prompt": prompt, "output": output, "language": lang,
                         "source": "veles" if lang == "ru" else "donor"})
    # variations so SFT has enough pairs; each gets several freshly generated
    # sentences so they are not near-duplicates of the base pair
    for i in range(120):
        lang = "ru" if i % 2 == 0 else "en"
        bank = RU_PROMPTS if lang == "ru" else EN_PROMPTS
        prompt, output = bank[rng.randrange(len(bank))]
        fn = ru_sentence if lang == "ru" else en_sentence
        extra = " ".join(fn(rng) for _ in range(rng.randint(3, 5)))
        rows.append({"prompt": f"{prompt} ({i})", "output": output + " " + extra,
                     "language": lang, "source": "synthetic"})
    # near-duplicates (dedup should drop these)
    for i in range(6):
        prompt, output = RU_PROMPTS[i]
        rows.append({"prompt": prompt, "output": output + " Да.",
                     "language": "ru", "source": "dup"})
    # degenerate outputs (reward filter should drop these)
    rows.append({"prompt": "Повтори слово.", "output": "да " * 200,
                 "language": "ru", "source": "degenerate"})
    rows.append({"prompt": "Echo this request please right now.",
                 "output": "Echo this request please right now.",
                 "language": "en", "source": "degenerate"})
    rng.shuffle(rows)
    with (DATA / "instructions.jsonl").open("w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def write_mcq(rng):
    items = []
    for _ in range(80):
        subj = rng.choice(RU_SUBJECTS)
        verb = rng.choice(RU_VERBS)
        gold = rng.choice(RU_OBJECTS)
        distractors = rng.sample([o for o in RU_OBJECTS if o != gold], 3)
        options = distractors + [gold]
        rng.shuffle(options)
        items.append({
            "question": f"{subj} {verb}",
            "options": options,
            "answer_idx": options.index(gold),
        })
    with (DATA / "mcq.jsonl").open("w", encoding="utf-8") as f:
        for it in items:
            f.write(json.dumps(it, ensure_ascii=False) + "\n")


def main():
    DATA.mkdir(exist_ok=True)
    rng = random.Random(SEED)
    write_ru(random.Random(rng.random()))
    write_en(random.Random(rng.random()))
    write_instructions(random.Random(rng.random()))
    write_mcq(random.Random(rng.random()))
    for name in ("ru_mini.txt", "en_mini.txt", "instructions.jsonl", "mcq.jsonl"):
        p = DATA / name
        print(f"{name}: {p.stat().st_size} bytes")


if __name__ == "__main__":
    main()
