"""Splitting one dataset across clients, balanced and deliberately skewed."""
import numpy as np

from fedtext.datashard import TABLE1_PERCENT, EncodedDataset, ShardPlan, imbalance_report, split_iid, split_noniid

labels = np.repeat(np.arange(3), 3100)
data = EncodedDataset(np.zeros((labels.size, 4), dtype=np.int64), labels, [""] * labels.size,
                      np.arange(labels.size))

iid = split_iid(data, 5, seed=0)
print("IID shard sizes:", [len(s) for s in iid])
print("IID class counts of client 0:", iid[0].class_counts.tolist())

# Rows are clients, columns are the percentage of each class a client takes.
print("skewed plan (% of each class):")
print(TABLE1_PERCENT)
skewed = split_noniid(data, ShardPlan.table1(), seed=0)
for s in skewed:
    print(f"  client {s.client_id}: {s.class_counts.tolist()}")

for name, shards in (("iid", iid), ("table1", skewed)):
    rep = imbalance_report(shards)
    print(f"{name}: data imbalanced={rep.data_imbalanced}, class imbalanced={rep.class_imbalanced}")

custom = ShardPlan.from_percentages([[70, 30, 50], [30, 70, 50]])
print("custom two-client plan:", [s.class_counts.tolist() for s in split_noniid(data, custom)])
